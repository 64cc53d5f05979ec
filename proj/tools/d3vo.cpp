// Command-line front end: run, synth, eval, loss-check.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "d3vo/errors.hpp"
#include "d3vo/pipeline.hpp"

namespace {

using namespace d3vo;

int run_command(const std::string& manifest, const std::string& config_path, const std::string& output,
                std::uint64_t seed, const std::vector<std::string>& ablate,
                const std::vector<std::string>& overrides) {
  RunConfig config = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const std::string& a : ablate) {
    if (a == "dd") config.use_depth_prior = false;
    if (a == "dp") config.use_pose_prior = false;
    if (a == "du") config.use_uncertainty = false;
  }
  config.validate();
  return cmd_run(manifest, config, output, seed, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct monocular visual odometry with depth, pose and uncertainty priors"};
  app.require_subcommand(1);

  std::string manifest, config_path, output = "out";
  std::uint64_t seed = 0;
  std::vector<std::string> ablate, overrides;
  CLI::App* run = app.add_subcommand("run", "Track a sequence described by a manifest");
  run->add_option("manifest", manifest, "Manifest file (camera.txt beside it)")->required()->check(CLI::ExistingFile);
  run->add_option("-c,--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  run->add_option("-o,--output", output, "Output directory")->capture_default_str();
  run->add_option("-s,--seed", seed, "Seed recorded in the log")->capture_default_str();
  run->add_option("--ablate", ablate, "Disable a prior (repeatable)")->check(CLI::IsMember({"dd", "dp", "du"}));
  run->add_option("--set", overrides, "Override a config key (key=value, repeatable)");

  std::string synth_config, synth_out = "synth";
  std::uint64_t synth_seed = 0;
  CLI::App* synth = app.add_subcommand("synth", "Render a synthetic sequence with priors");
  synth->add_option("-c,--config", synth_config, "key = value synth config")->check(CLI::ExistingFile);
  synth->add_option("-o,--output", synth_out, "Output directory")->capture_default_str();
  synth->add_option("-s,--seed", synth_seed, "Scene, trajectory and noise seed")->capture_default_str();

  std::string estimate, ground_truth, csv;
  bool sim3 = false;
  CLI::App* eval = app.add_subcommand("eval", "ATE and t_rel of a trajectory against ground truth");
  eval->add_option("estimate", estimate, "Estimated trajectory")->required()->check(CLI::ExistingFile);
  eval->add_option("ground_truth", ground_truth, "Ground-truth trajectory")->required()->check(CLI::ExistingFile);
  eval->add_flag("--sim3", sim3, "Align with scale");
  eval->add_option("--csv", csv, "Write the report as CSV");

  std::uint64_t loss_seed = 0;
  int loss_size = 32;
  CLI::App* loss = app.add_subcommand("loss-check", "Finite-difference check of the training-loss gradients");
  loss->add_option("-s,--seed", loss_seed, "Problem seed")->capture_default_str();
  loss->add_option("--size", loss_size, "Image size")->check(CLI::Range(8, 512))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*run) return run_command(manifest, config_path, output, seed, ablate, overrides);
    if (*synth) {
      const SynthConfig config = synth_config.empty() ? SynthConfig() : SynthConfig::load(synth_config);
      const GeneratedSequence g = cmd_synth(config, synth_seed, synth_out);
      std::cout << "manifest " << g.manifest.string() << "\nground truth " << g.ground_truth.string() << '\n';
      return kExitSuccess;
    }
    if (*eval) {
      cmd_eval(estimate, ground_truth, sim3, csv, std::cout);
      return kExitSuccess;
    }
    if (*loss) return cmd_loss_check(loss_seed, loss_size, std::cout) ? kExitSuccess : kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitSuccess;
}

#pragma once

// Full odometry run over a loaded sequence (tracking, keyframe selection,
// windowed bundle adjustment) and the command entry points used by the CLI.

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "d3vo/config.hpp"
#include "d3vo/eval.hpp"
#include "d3vo/priors.hpp"

namespace d3vo {

enum ExitCode : int { kExitSuccess = 0, kExitLost = 2, kExitInput = 3, kExitNumerical = 4 };

/// InputError -> 3, everything else -> 4.
int exit_code_for(const std::exception& e);

struct FrameRecord {
  int frame = 0;
  double timestamp = 0.0;
  bool keyframe = false;
  double valid_fraction = 1.0;
  double energy = 0.0;
  double mean_displacement = 0.0;
  int iterations = 0;
  double a = 0.0;
  double b = 0.0;
};

struct RunResult {
  bool lost = false;
  std::string message;
  Trajectory trajectory{PoseConvention::CameraToWorld};  ///< every tracked frame
  Trajectory keyframes{PoseConvention::CameraToWorld};
  std::vector<Vec3> points;  ///< world positions of the last estimate of every point
  std::vector<FrameRecord> frames;
  int tracking_violations = 0;
  int graph_violations = 0;
  int backend_violations = 0;
  int backend_solves = 0;
  int retracks = 0;  ///< alignments rerun from alternative starts
};

/// Runs the odometry. Frame 0 defines the world frame. Tracking loss stops
/// the run with `lost` set and the frames tracked so far in the trajectory.
RunResult run_sequence(const LoadedSequence& sequence, const Intrinsics& intrinsics, const RunConfig& config,
                       Exec exec = default_exec());

/// Chained priors from frame 0 (frame 0 at the identity), camera-to-world.
Trajectory prior_chain_trajectory(const LoadedSequence& sequence);

void save_ply(const std::filesystem::path& path, const std::vector<Vec3>& points);

/// Reads `manifest` and `camera.txt` beside it, runs, writes trajectory.txt,
/// keyframes.txt, points.ply, frames.csv, run.log and config.txt into
/// `out_dir`. Returns 0 or 2; errors propagate.
int cmd_run(const std::filesystem::path& manifest, const RunConfig& config, const std::filesystem::path& out_dir,
            std::uint64_t seed, std::ostream& log);

/// Renders the room scene described by `config` with `seed` into `out_dir`.
GeneratedSequence cmd_synth(const SynthConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);

/// Prints the report and writes `<csv>` when non-empty.
EvalReport cmd_eval(const std::filesystem::path& estimate, const std::filesystem::path& ground_truth, bool sim3,
                    const std::filesystem::path& csv, std::ostream& out);

/// Finite-difference check of the training-loss gradients on a synthetic
/// size x size problem. Returns true on pass.
bool cmd_loss_check(std::uint64_t seed, int size, std::ostream& out);

}  // namespace d3vo

#include "d3vo/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <tuple>

#include "d3vo/backend.hpp"
#include "d3vo/errors.hpp"
#include "d3vo/frontend.hpp"
#include "d3vo/selfsup.hpp"
#include "d3vo/synth.hpp"

namespace d3vo {

namespace fs = std::filesystem;

namespace {

struct TrackedFrame {
  int frame = 0;
  double timestamp = 0.0;
  int reference = -1;  ///< keyframe id; -1 when the frame is a keyframe itself
  int keyframe = -1;
  Se3 relative;  ///< reference-to-frame
};

// Active window points expressed in the camera of keyframe `ref`.
std::vector<Vec3> points_in(const Window& window, const Se3& ref_pose) {
  std::vector<Vec3> out;
  for (const ActivePoint& p : window.points()) {
    if (p.status != PointStatus::Active) continue;
    const Keyframe& host = window.keyframe(p.host);
    const Vec3 x = ref_pose * (host.state.pose.inverse() * backproject(p.pixel, 1.0 / p.inv_depth, window.intrinsics()));
    if (x.z() > 0.0) out.push_back(x);
  }
  return out;
}

using PointKey = std::tuple<int, long, long>;

void record_window(const Window& window, std::map<int, Se3>& keyframe_poses, std::map<PointKey, Vec3>& cloud) {
  for (const Keyframe& kf : window.keyframes()) keyframe_poses[kf.id] = kf.state.pose;
  for (const ActivePoint& p : window.points()) {
    const PointKey key{p.host, std::lround(p.pixel.x()), std::lround(p.pixel.y())};
    if (p.status == PointStatus::Outlier) {
      cloud.erase(key);
      continue;
    }
    if (p.status != PointStatus::Active) continue;
    const Keyframe& host = window.keyframe(p.host);
    cloud[key] = host.state.pose.inverse() * backproject(p.pixel, 1.0 / p.inv_depth, window.intrinsics());
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  return dynamic_cast<const InputError*>(&e) != nullptr ? kExitInput : kExitNumerical;
}

RunResult run_sequence(const LoadedSequence& sequence, const Intrinsics& intrinsics, const RunConfig& config,
                       Exec exec) {
  config.validate();
  intrinsics.validate();
  if (sequence.frames.empty()) throw InputError("run: empty sequence");
  const auto& frames = sequence.frames;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (frames[k].image.width() != intrinsics.width || frames[k].image.height() != intrinsics.height) {
      throw InputError("run: frame " + std::to_string(k) + " does not match the camera size");
    }
  }
  const TrackingConfig tracking = config.tracking();
  const PoseCovariance covariance = config.covariance();
  // The tracking regularizer and the graph's between factors carry the same
  // weight w as the backend pose term.
  const bool dp = config.use_pose_prior;
  const bool weighted = dp && config.pose_weight > 0.0;
  const PoseCovariance tracking_covariance(covariance.diagonal / (weighted ? config.pose_weight : 1.0));

  RunResult result;
  Window window(config.backend(), intrinsics, exec);
  std::map<int, Se3> keyframe_poses;
  std::map<PointKey, Vec3> cloud;
  std::vector<TrackedFrame> tracked;

  auto make_keyframe = [&](std::size_t k, const FrameState& state, std::optional<PosePrior> prior) {
    // Marginalizing before the insertion linearizes at the last optimized
    // state and frees the point budget for the new keyframe.
    if (static_cast<int>(window.keyframes().size()) >= config.window_capacity) {
      window.marginalize_keyframe(window.keyframes().front().id);
    }
    const int id = window.add_keyframe(frames[k], state, prior, static_cast<int>(k));
    if (window.keyframes().size() >= 2) {
      const SolveReport r = window.optimize();
      result.backend_violations += r.monotone_violations;
      ++result.backend_solves;
      window.reject_outliers();
    }
    record_window(window, keyframe_poses, cloud);
    return id;
  };

  int ref_id = make_keyframe(0, FrameState{}, std::nullopt);
  tracked.push_back({0, frames[0].timestamp, -1, ref_id, Se3()});
  result.frames.push_back({0, frames[0].timestamp, true, 1.0, 0.0, 0.0, 0, 0.0, 0.0});

  auto reference_state = [&]() { return window.keyframe(ref_id).state; };
  FrameState ref = reference_state();
  Pyramid ref_pyramid(window.keyframe(ref_id).image, tracking.levels);
  DepthMap ref_depth = splat_reference_depth(points_in(window, ref.pose), intrinsics, config.splat_radius);
  TrackingGraph graph(0, ref.pose, config.graph_max_nodes);
  std::vector<PosePrior> since_keyframe;

  Se3 last = ref.pose;
  std::optional<Se3> before_last;
  double last_a = ref.a;
  double last_b = ref.b;
  double last_energy = 0.0;

  for (std::size_t k = 1; k < frames.size(); ++k) {
    const FrameBundle& bundle = frames[k];
    const PosePrior step{bundle.pose_prior.pose, tracking_covariance};
    since_keyframe.push_back({bundle.pose_prior.pose, covariance});

    const Se3 predicted = predict_initial_pose(last, dp ? std::optional<Se3>(step.pose) : std::nullopt, before_last);
    AlignmentInit init;
    init.pose = predicted * ref.pose.inverse();
    init.a = last_a + std::log(bundle.brightness_prior.a);
    init.b = bundle.brightness_prior.b + bundle.brightness_prior.a * last_b;
    std::optional<PosePrior> tracking_prior;
    if (weighted) tracking_prior = PosePrior{step.pose * last * ref.pose.inverse(), tracking_covariance};

    if (static_cast<int>(ref_depth.valid_count()) < tracking.min_reference_pixels) {
      result.lost = true;
      result.message = "reference keyframe has too few points at frame " + std::to_string(k);
      break;
    }
    const Pyramid pyramid(bundle.image, tracking.levels);
    const ReferenceView view{ref_pyramid, ref_depth, ref.a, ref.b};
    // A gain far from the brightness prior means the photometric term was
    // explained away by the affine model rather than by motion.
    auto plausible = [&](const AlignmentResult& r) {
      return !r.lost && std::abs(r.a - init.a) <= config.max_gain_deviation;
    };
    AlignmentResult aligned = align_direct(pyramid, view, intrinsics, init, tracking_prior, tracking, exec);
    result.tracking_violations += aligned.monotone_violations;
    if (!plausible(aligned) || (k > 1 && aligned.energy > config.retrack_threshold * last_energy)) {
      // Alternative starts: constant velocity and no motion.
      std::vector<Se3> starts{last};
      if (before_last) starts.insert(starts.begin(), last * before_last->inverse() * last);
      for (const Se3& s : starts) {
        AlignmentInit alt = init;
        alt.pose = s * ref.pose.inverse();
        const AlignmentResult r = align_direct(pyramid, view, intrinsics, alt, tracking_prior, tracking, exec);
        result.tracking_violations += r.monotone_violations;
        ++result.retracks;
        const bool better = plausible(r) != plausible(aligned) ? plausible(r) : r.energy < aligned.energy;
        if (better) aligned = r;
      }
    }
    last_energy = aligned.energy;
    FrameRecord rec{static_cast<int>(k), bundle.timestamp, false, aligned.valid_fraction, aligned.energy,
                    aligned.mean_displacement, 0, aligned.a, aligned.b};
    for (int it : aligned.level_iterations) rec.iterations += it;
    if (!plausible(aligned)) {
      result.lost = true;
      result.message = "tracking lost at frame " + std::to_string(k) + " (valid fraction " +
                       fmt("%.3f", aligned.valid_fraction) + ", gain change " + fmt("%.3f", aligned.a - init.a) + ")";
      result.frames.push_back(rec);
      break;
    }

    graph.add_node(static_cast<int>(k), aligned.pose * ref.pose, aligned.factor,
                   weighted ? std::optional<PosePrior>(step) : std::nullopt);
    result.graph_violations += graph.optimize().monotone_violations;
    while (static_cast<int>(graph.nodes().size()) > config.graph_max_nodes) graph.marginalize_oldest();
    const Se3 world = graph.node(static_cast<int>(k)).pose;
    const bool new_keyframe = aligned.mean_displacement > config.keyframe_displacement * intrinsics.width ||
                              aligned.valid_fraction < config.keyframe_valid_fraction;
    before_last = last;
    last = world;
    last_a = aligned.a;
    last_b = aligned.b;
    if (!new_keyframe) {
      tracked.push_back({static_cast<int>(k), bundle.timestamp, ref_id, -1, world * ref.pose.inverse()});
      result.frames.push_back(rec);
      continue;
    }

    std::optional<PosePrior> kf_prior;
    if (dp) kf_prior = chain_pose_priors(since_keyframe);
    ref_id = make_keyframe(k, FrameState{world, aligned.a, aligned.b}, kf_prior);
    tracked.push_back({static_cast<int>(k), bundle.timestamp, -1, ref_id, Se3()});
    rec.keyframe = true;
    result.frames.push_back(rec);
    since_keyframe.clear();

    // The optimized keyframe becomes the new tracking reference; the motion
    // model continues from its refined pose.
    ref = reference_state();
    if (before_last) before_last = *before_last * world.inverse() * ref.pose;
    last = ref.pose;
    last_a = ref.a;
    last_b = ref.b;
    ref_pyramid = Pyramid(window.keyframe(ref_id).image, tracking.levels);
    ref_depth = splat_reference_depth(points_in(window, ref.pose), intrinsics, config.splat_radius);
    graph = TrackingGraph(static_cast<int>(k), ref.pose, config.graph_max_nodes);
  }

  for (const TrackedFrame& f : tracked) {
    const Se3 world = f.keyframe >= 0 ? keyframe_poses.at(f.keyframe) : f.relative * keyframe_poses.at(f.reference);
    result.trajectory.push_back(f.timestamp, world.inverse());
    if (f.keyframe >= 0) result.keyframes.push_back(f.timestamp, world.inverse());
  }
  for (const auto& [key, x] : cloud) result.points.push_back(x);
  return result;
}

Trajectory prior_chain_trajectory(const LoadedSequence& sequence) {
  Trajectory t(PoseConvention::CameraToWorld);
  Se3 world;
  for (std::size_t k = 0; k < sequence.frames.size(); ++k) {
    if (k > 0) world = sequence.frames[k].pose_prior.pose * world;
    t.push_back(sequence.frames[k].timestamp, world.inverse());
  }
  return t;
}

void save_ply(const fs::path& path, const std::vector<Vec3>& points) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[96];
  for (const Vec3& p : points) {
    std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f\n", p.x(), p.y(), p.z());
    out << buf;
  }
  if (!out) throw InputError("failed writing " + path.string());
}

int cmd_run(const fs::path& manifest, const RunConfig& config, const fs::path& out_dir, std::uint64_t seed,
            std::ostream& log) {
  config.validate();
  const Intrinsics intrinsics = read_camera(manifest.parent_path() / "camera.txt");
  const LoadedSequence sequence = load_sequence(manifest, config.covariance());
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw InputError("cannot create " + out_dir.string() + ": " + ec.message());

  std::ofstream run_log(out_dir / "run.log");
  if (!run_log) throw InputError("cannot write " + (out_dir / "run.log").string());
  auto both = [&](const std::string& line) {
    log << line << '\n';
    run_log << line << '\n';
  };
  both("manifest " + manifest.string());
  both("frames " + std::to_string(sequence.frames.size()) + ", seed " + std::to_string(seed));
  both("masked depth " + std::to_string(sequence.masked_depth) + ", masked uncertainty " +
       std::to_string(sequence.masked_uncertainty));
  for (const std::string& w : sequence.warnings) both("warning: " + w);
  {
    std::ofstream cfg(out_dir / "config.txt");
    cfg << config.to_text();
  }

  const RunResult r = run_sequence(sequence, intrinsics, config);
  save_trajectory_tum(r.trajectory, out_dir / "trajectory.txt");
  save_trajectory_tum(r.keyframes, out_dir / "keyframes.txt");
  save_ply(out_dir / "points.ply", r.points);

  std::ofstream csv(out_dir / "frames.csv");
  csv << "frame,timestamp,keyframe,valid_fraction,energy,mean_displacement,iterations,a,b\n";
  char buf[256];
  for (const FrameRecord& f : r.frames) {
    std::snprintf(buf, sizeof buf, "%d,%.9f,%d,%.6f,%.9g,%.6f,%d,%.9f,%.9f\n", f.frame, f.timestamp,
                  f.keyframe ? 1 : 0, f.valid_fraction, f.energy, f.mean_displacement, f.iterations, f.a, f.b);
    csv << buf;
  }
  both("tracked " + std::to_string(r.trajectory.size()) + " frames, " + std::to_string(r.keyframes.size()) +
       " keyframes, " + std::to_string(r.points.size()) + " points");
  both("monotone violations: tracking " + std::to_string(r.tracking_violations) + ", backend " +
       std::to_string(r.backend_violations));
  if (r.lost) {
    both("status: lost, " + r.message);
    return kExitLost;
  }
  both("status: ok");
  return kExitSuccess;
}

GeneratedSequence cmd_synth(const SynthConfig& config, std::uint64_t seed, const fs::path& out_dir) {
  config.validate();
  Scene scene = make_room_scene(static_cast<std::uint32_t>(seed), config.reflective);
  scene.schedule.gain_amplitude = config.gain_amplitude;
  scene.schedule.bias_amplitude = config.bias_amplitude;
  SequenceSpec spec;
  spec.intrinsics = config.intrinsics();
  spec.world_to_camera = desk_trajectory(config.frames, static_cast<std::uint32_t>(seed), config.step);
  spec.frame_interval = config.frame_interval;
  GeneratedSequence seq = generate_sequence(scene, spec, config.corruption(seed), out_dir);
  std::ofstream(out_dir / "synth.txt") << config.to_text() << "seed = " << seed << '\n';
  return seq;
}

EvalReport cmd_eval(const fs::path& estimate, const fs::path& ground_truth, bool sim3, const fs::path& csv,
                    std::ostream& out) {
  const Trajectory est = load_trajectory(estimate);
  const Trajectory gt = load_trajectory(ground_truth);
  const EvalReport r = evaluate(est, gt, sim3);
  out << "pairs " << r.pairs << '\n';
  out << "t_rel " << fmt("%.6f", r.t_rel_percent) << " %  (" << (r.desk_scale ? "desk-scale" : "standard")
      << " segment set)\n";
  out << "ate_rmse_raw " << fmt("%.9f", r.ate_rmse_raw) << " m\n";
  out << "ate_rmse_aligned " << fmt("%.9f", r.ate_rmse_aligned) << " m  (" << (r.sim3 ? "sim3" : "se3")
      << " alignment)\n";
  for (const SegmentStats& s : r.segments) {
    out << "  segment " << fmt("%.4f", s.length) << " m: " << s.count << " samples, "
        << fmt("%.6f", s.mean_error_percent) << " %\n";
  }
  if (!csv.empty()) write_eval_csv(r, csv);
  return r;
}

bool cmd_loss_check(std::uint64_t seed, int size, std::ostream& out) {
  const LossProblem problem = synthetic_loss_problem(static_cast<std::uint32_t>(seed), size, 2, 2, true);
  const GradientCheckReport r = check_loss_gradients(problem, 100, seed);
  out << "checked " << r.checked << ", skipped " << r.skipped << ", failed " << r.failed << ", worst ratio "
      << fmt("%.4f", r.worst_ratio) << '\n';
  for (const std::string& f : r.failures) out << "  " << f << '\n';
  out << (r.passed() ? "PASS" : "FAIL") << '\n';
  return r.passed();
}

}  // namespace d3vo

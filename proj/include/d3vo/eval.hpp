#pragma once

// Trajectory containers, text formats and the ATE / t_rel metrics.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d3vo/geometry.hpp"

namespace d3vo {

enum class PoseConvention { WorldToCamera, CameraToWorld };

struct StampedPose {
  double timestamp = 0.0;
  Se3 pose;
};

class Trajectory {
 public:
  explicit Trajectory(PoseConvention convention = PoseConvention::CameraToWorld)
      : convention_(convention) {}

  /// Throws InputError unless `timestamp` exceeds the last one.
  void push_back(double timestamp, const Se3& pose);

  PoseConvention convention() const { return convention_; }
  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  const StampedPose& operator[](std::size_t i) const { return poses_[i]; }
  std::span<const StampedPose> poses() const { return poses_; }

  /// Pose i as camera-to-world regardless of the stored convention.
  Se3 camera_to_world(std::size_t i) const;
  Vec3 position(std::size_t i) const { return camera_to_world(i).translation(); }
  Trajectory as_camera_to_world() const;

 private:
  PoseConvention convention_;
  std::vector<StampedPose> poses_;
};

/// Files hold camera-to-world poses. Eight columns are TUM
/// (`t tx ty tz qx qy qz qw`), twelve columns are KITTI rows (timestamps are
/// the row index), thirteen are a timestamp followed by a KITTI row.
Trajectory load_trajectory(const std::filesystem::path& path);
void save_trajectory_tum(const Trajectory& trajectory, const std::filesystem::path& path);
void save_trajectory_kitti(const Trajectory& trajectory, const std::filesystem::path& path);

struct AssociatedPair {
  std::size_t est;
  std::size_t gt;
};

/// Nearest ground-truth timestamp within `max_dt` for each estimate.
std::vector<AssociatedPair> associate(const Trajectory& est, const Trajectory& gt,
                                      double max_dt = 0.01);

struct SegmentStats {
  double length = 0.0;
  std::size_t count = 0;
  double mean_error_percent = 0.0;
};

struct TRelResult {
  double percent = 0.0;
  bool desk_scale = false;
  std::vector<SegmentStats> segments;  ///< lengths with at least one sample
};

/// KITTI-style relative translational error averaged over all (start, length)
/// samples. Uses {100..800} m when the ground-truth path is at least 100 m
/// long, otherwise {10%..80%} of its length. Throws InputError when nothing
/// associates or no segment fits.
TRelResult t_rel(const Trajectory& est, const Trajectory& gt);

enum class AlignMode { None, Se3, Sim3 };

struct AteResult {
  double rmse = 0.0;
  Alignment alignment;  ///< maps estimate positions onto ground truth
  std::size_t pairs = 0;
};

/// Throws InputError when nothing associates, GeometryError on a degenerate
/// alignment.
AteResult ate_rmse(const Trajectory& est, const Trajectory& gt, AlignMode mode);

struct EvalReport {
  double t_rel_percent = 0.0;
  bool desk_scale = false;
  double ate_rmse_raw = 0.0;
  double ate_rmse_aligned = 0.0;
  Alignment alignment;
  bool sim3 = false;
  std::size_t pairs = 0;
  std::vector<SegmentStats> segments;
};

EvalReport evaluate(const Trajectory& est, const Trajectory& gt, bool sim3 = false);

/// Two-column `metric,value` summary followed by the per-segment table.
void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace d3vo

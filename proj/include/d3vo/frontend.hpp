#pragma once

// Frame-to-keyframe tracking: coarse-to-fine direct alignment with a pose
// prior, and the small factor graph over recent non-keyframes.
//
// Tracked poses are relative to the reference keyframe (they map reference
// camera points into the frame); graph nodes hold world-to-camera poses.

#include <optional>
#include <span>
#include <vector>

#include "d3vo/geometry.hpp"
#include "d3vo/imaging.hpp"
#include "d3vo/maps.hpp"
#include "d3vo/parallel.hpp"

namespace d3vo {

/// prior * last, or the constant-velocity extrapolation
/// (last * before_last^-1) * last without a prior, or last alone.
Se3 predict_initial_pose(const Se3& last, const std::optional<Se3>& prior_relative,
                         const std::optional<Se3>& before_last = std::nullopt);

struct TrackingConfig {
  int levels = 4;
  int max_iterations = 20;
  int max_halvings = 8;
  double relative_tolerance = 1e-6;
  double huber_gamma = 9.0 / 255.0;
  double lost_fraction = 0.1;
  int min_reference_pixels = 200;

  void validate() const;
};

struct ReferenceView {
  const Pyramid& image;
  const DepthMap& depth;
  double a = 0.0;  ///< exponential-gain affine state of the reference
  double b = 0.0;
  /// Optional per-pixel occlusion flags (level 0). Occluded pixels never
  /// count as valid but stay in the valid-fraction denominator.
  std::span<const std::uint8_t> occluded = {};
};

struct AlignmentInit {
  Se3 pose;  ///< reference-to-frame
  double a = 0.0;
  double b = 0.0;
};

/// Quadratic model of the photometric alignment energy around `linearization`
/// (reference-to-frame), affine parameters eliminated:
/// E(d) ~ E0 + 2 g^T d + d^T H d with d = Log(T linearization^-1).
struct DirectFactor {
  Se3 linearization;
  Mat6 hessian = Mat6::Zero();
  Vec6 gradient = Vec6::Zero();
};

struct AlignmentResult {
  Se3 pose;
  double a = 0.0;
  double b = 0.0;
  double energy = 0.0;
  double valid_fraction = 0.0;
  bool converged = false;
  bool lost = false;
  std::vector<int> level_iterations;  ///< finest level first
  int monotone_violations = 0;
  /// Mean image-plane displacement of the valid reference pixels, level 0.
  double mean_displacement = 0.0;
  DirectFactor factor;
};

/// Minimizes sum huber(I_f[p'] - b - e^(a - a_ref)(I_ref[p] - b_ref)) over
/// reference pixels with depth plus Log(P T^-1)^T Sigma^-1 Log(P T^-1) for a
/// prior P. Reference pixels within 2 px of the border are skipped and
/// pixels that leave the frame drop out. Throws InputError when the
/// reference has fewer than min_reference_pixels valid depths.
AlignmentResult align_direct(const Pyramid& frame, const ReferenceView& reference,
                             const Intrinsics& intrinsics, const AlignmentInit& init,
                             const std::optional<PosePrior>& prior, const TrackingConfig& config = {},
                             Exec exec = default_exec());

/// Energy of align_direct's objective at level 0 (prior included).
double alignment_energy(const Pyramid& frame, const ReferenceView& reference, const Intrinsics& intrinsics,
                        const AlignmentInit& state, const std::optional<PosePrior>& prior,
                        const TrackingConfig& config = {});

struct GraphReport {
  int iterations = 0;
  int accepted_steps = 0;
  int monotone_violations = 0;
  double initial_energy = 0.0;
  double final_energy = 0.0;
};

/// Non-keyframe poses tied to a fixed reference keyframe by direct factors,
/// to each other by relative pose priors, and to the past by a
/// marginalization prior E = d^T H d + 2 b^T d, d_i = Log(T_i T_i,lin^-1).
class TrackingGraph {
 public:
  struct Node {
    int frame = 0;
    Se3 pose;  ///< world-to-camera
    std::optional<DirectFactor> direct;
    /// Relative prior from node `between_from` (or the reference) to this one.
    std::optional<PosePrior> between;
    int between_from = -1;
  };

  /// `max_nodes` < 0 keeps every node (batch mode).
  TrackingGraph(int reference_frame, const Se3& reference_pose, int max_nodes = 2);

  int reference_frame() const { return reference_frame_; }
  const Se3& reference_pose() const { return reference_pose_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int frame) const;

  /// Adds a node whose between factor (if any) links it to the newest node,
  /// or to the reference when the graph is empty. Does not optimize.
  void add_node(int frame, const Se3& init, std::optional<DirectFactor> direct,
                std::optional<PosePrior> between);

  /// add_node, optimize, then marginalize the oldest nodes down to max_nodes.
  /// Returns the new node's optimized pose.
  Se3 update(int frame, const Se3& init, std::optional<DirectFactor> direct,
             std::optional<PosePrior> between);

  GraphReport optimize(int max_iterations = 20, double relative_tolerance = 1e-6);
  double energy() const;

  void marginalize_oldest();
  /// Schur-complements the listed nodes jointly at the current states.
  void marginalize(std::span<const int> frames);

  /// Covariance of the left perturbation of `frame` under the current
  /// linearization of all factors.
  Mat6 marginal_covariance(int frame) const;

  const std::vector<int>& prior_frames() const { return prior_frames_; }
  const Eigen::MatrixXd& prior_hessian() const { return prior_h_; }
  const Eigen::VectorXd& prior_gradient() const { return prior_b_; }

 private:
  struct System;
  int index_of(int frame) const;
  System linearize(std::span<const int> frames) const;

  int reference_frame_;
  Se3 reference_pose_;
  int max_nodes_;
  std::vector<Node> nodes_;
  std::vector<int> prior_frames_;
  std::vector<Se3> prior_lin_;
  Eigen::MatrixXd prior_h_;
  Eigen::VectorXd prior_b_;
};

/// Depth raster for tracking: each point (reference camera frame) fills the
/// (2 radius + 1)^2 square around its projection, nearest surface kept.
DepthMap splat_reference_depth(std::span<const Vec3> reference_points, const Intrinsics& intrinsics,
                               int radius = 1);

}  // namespace d3vo

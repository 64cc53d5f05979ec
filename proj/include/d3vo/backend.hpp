#pragma once

// Windowed photometric bundle adjustment over keyframes and inverse-depth
// points, with virtual-stereo and pose-prior terms and keyframe
// marginalization.
//
// Keyframe states are (left twist perturbation of the world-to-camera pose,
// a, b) with the exponential gain convention: the photometric residual of a
// point hosted in i observed in j is (I_j[p'] - b_j) - e^(a_j - a_i) (I_i[p] - b_i).

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "d3vo/geometry.hpp"
#include "d3vo/imaging.hpp"
#include "d3vo/maps.hpp"
#include "d3vo/parallel.hpp"
#include "d3vo/priors.hpp"
#include "d3vo/robust.hpp"

namespace d3vo {

using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using RowVec8 = Eigen::Matrix<double, 1, 8>;

inline constexpr int kPatternSize = 8;
inline constexpr std::array<std::array<int, 2>, kPatternSize> kPattern{
    {{0, 0}, {-2, 0}, {2, 0}, {0, -2}, {0, 2}, {-1, -1}, {1, -1}, {-1, 1}}};

/// alpha^2 / (alpha^2 + sigma^2).
double uncertainty_weight(double sigma, double alpha);

struct FrameState {
  Se3 pose;  ///< world-to-camera
  double a = 0.0;
  double b = 0.0;
};

/// Applies a state increment: pose <- exp(d[0:6]) pose, a += d[6], b += d[7].
FrameState apply_increment(const FrameState& s, const Vec8& d);

struct PatternResidual {
  double value = 0.0;
  bool valid = false;
  double d_inv_depth = 0.0;
  RowVec8 d_host = RowVec8::Zero();
  RowVec8 d_target = RowVec8::Zero();
};

struct ResidualTerm {
  std::array<PatternResidual, kPatternSize> residuals;
  int valid_count = 0;
  /// At least 5 of 8 pattern pixels valid and the point in front of the target.
  bool valid = false;
};

/// Photometric residuals of one point (host pixel, inverse depth) observed in
/// a target keyframe, with Jacobians.
ResidualTerm photometric_residual_term(const Raster& host_image, const FrameState& host,
                                       const Vec2& pixel, double inv_depth,
                                       const Raster& target_image, const FrameState& target,
                                       const Intrinsics& intrinsics);

/// Virtual stereo residuals: the host image sampled at the double warp through
/// a horizontal baseline and the right-view inverse depth raster, minus the
/// host image at the pattern pixel. Only d_inv_depth is non-zero.
ResidualTerm virtual_stereo_term(const Raster& host_image, const Raster& stereo_inv_depth,
                                 const Vec2& pixel, double inv_depth, double baseline,
                                 const Intrinsics& intrinsics);

/// Inverse depth of the virtual right camera (translated by +baseline along
/// x) obtained by scanline forward-warping the left depth; 0 marks holes.
Raster stereo_inverse_depth(const DepthMap& left_depth, double baseline, const Intrinsics& intrinsics);

struct PoseTerm {
  Vec6 error = Vec6::Zero();  ///< Log(prior * T_prev * T_cur^-1)
  Mat6 d_prev = Mat6::Zero();
  Mat6 d_cur = Mat6::Zero();
  double energy = 0.0;  ///< error^T information error
};

PoseTerm pose_prior_term(const Se3& prior, const Mat6& information, const Se3& prev, const Se3& cur);

struct BackendConfig {
  double huber_gamma = 9.0 / 255.0;
  double uncertainty_scale_alpha = 0.5;
  double virtual_stereo_lambda = 1.0;
  double pose_weight = 1.0;
  double stereo_baseline = 0.1;
  int window_capacity = 7;
  int point_budget = 800;
  int cell_size = 16;
  /// Candidate threshold = scale * median gradient magnitude + offset.
  double gradient_median_scale = 1.0;
  double gradient_offset = 2.0 / 255.0;
  int max_iterations = 12;
  double relative_tolerance = 1e-6;
  int max_halvings = 8;
  /// Pyramid levels on which keyframe states are aligned (point depths held)
  /// before full resolution; kept only if they lower the full-resolution energy.
  int coarse_levels = 2;
  /// Observations whose RMS Huber energy per pattern pixel exceeds this
  /// (intensity units) are rejected by reject_outliers().
  double outlier_threshold = 12.0 / 255.0;
  bool use_uncertainty = true;   ///< Du
  bool use_depth_prior = true;   ///< Dd
  bool use_pose_prior = true;    ///< Dp

  void validate() const;
};

enum class PointStatus { Active, Marginalized, Outlier };

struct ActivePoint {
  int host = 0;
  Vec2 pixel = Vec2::Zero();
  double inv_depth = 1.0;
  double weight = 1.0;
  PointStatus status = PointStatus::Active;
  /// Keyframe ids whose observation of this point was rejected as an outlier.
  std::vector<int> rejected_targets;
};

struct Keyframe {
  int id = 0;
  int frame_index = 0;
  double timestamp = 0.0;
  FrameState state;
  Image image;
  DepthMap prior_depth;
  UncertaintyMap uncertainty;
  Raster stereo_inv_depth;
  /// Chained prior from keyframe `prior_from` (maps it to this one).
  std::optional<PosePrior> prior;
  int prior_from = -1;
};

struct SolveReport {
  int iterations = 0;
  int accepted_steps = 0;
  int rejected_steps = 0;
  int monotone_violations = 0;
  double initial_energy = 0.0;
  double final_energy = 0.0;
  bool converged = false;
};

struct EnergyBreakdown {
  double photometric = 0.0;  ///< includes lambda * virtual stereo
  double stereo = 0.0;       ///< unweighted virtual stereo part
  double pose = 0.0;         ///< unweighted pose-prior energy
  double marginalization = 0.0;
  double total = 0.0;
};

class Window {
 public:
  Window(const BackendConfig& config, const Intrinsics& intrinsics, Exec exec = default_exec());

  const BackendConfig& config() const { return config_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  const std::vector<ActivePoint>& points() const { return points_; }
  std::size_t active_point_count() const;
  const Keyframe& keyframe(int id) const;
  bool has_marginalization_prior() const { return marg_dim_ > 0; }

  /// Appends a keyframe, activates points from its prior depth and, when the
  /// window is over capacity, marginalizes the oldest keyframe. Returns the id.
  int add_keyframe(const FrameBundle& bundle, const FrameState& tracked,
                   std::optional<PosePrior> prior_from_previous, int frame_index = 0);

  /// Candidate pixels for a keyframe image (cell grid, median-scaled
  /// threshold, valid depth), at most `target`. Pixels whose prior depth is
  /// locally planar come first; a group that overflows is thinned evenly.
  std::vector<Vec2> select_points(const Image& image, const DepthMap& depth, int target) const;

  EnergyBreakdown energy() const;
  double energy_total() const { return energy().total; }

  SolveReport optimize();

  /// Rejects observations whose mean pattern energy exceeds the outlier
  /// threshold at the current state. Returns the number rejected.
  int reject_outliers();

  /// Schur-complements keyframe `id` (not the newest) into the
  /// marginalization prior.
  void marginalize_keyframe(int id);

  /// Drops the residuals that marginalizing `id` would discard (residuals of
  /// other hosts observed in `id`, and `id`-hosted points with fewer than two
  /// observations) without eliminating anything.
  void prepare_marginalization(int id);

  /// Undamped Gauss-Newton increment for every free keyframe (zero for the
  /// gauge-fixed one), keyed by keyframe id.
  std::map<int, Vec8> linear_step() const;

  /// Number of keyframes whose residual term with the point is valid.
  int observation_count(const ActivePoint& point) const;

  // State access for tests and the pipeline.
  void set_state(int id, const FrameState& state);
  void set_inverse_depth(std::size_t point, double inv_depth);
  void set_point_weight(std::size_t point, double weight);
  std::size_t add_point(const ActivePoint& point);

  /// Id of the keyframe held constant, if any (the oldest while no
  /// marginalization prior exists).
  std::optional<int> gauge_keyframe() const;

  /// Total monotone-descent violations over all optimize() calls.
  int monotone_violations() const { return total_violations_; }

 private:
  struct Linearization;

  int index_of(int id) const;
  Linearization linearize(bool include_fixed) const;
  SolveReport optimize_level(bool fix_points = false);
  double point_energy(const ActivePoint& p, double* stereo_part) const;
  bool point_in_front(const ActivePoint& p) const;

  BackendConfig config_;
  Intrinsics intrinsics_;
  Exec exec_;
  std::vector<Keyframe> keyframes_;
  std::vector<ActivePoint> points_;
  std::vector<int> excluded_targets_;
  int next_id_ = 0;
  int total_violations_ = 0;

  // Marginalization prior over the keyframes listed in marg_ids_ (8 dims
  // each, in that order): E = d^T H d + 2 b^T d, d = state (-) linearization.
  std::vector<int> marg_ids_;
  std::vector<FrameState> marg_lin_;
  Eigen::MatrixXd marg_h_;
  Eigen::VectorXd marg_b_;
  int marg_dim_ = 0;
};

/// 8-vector difference (Log(a.pose b.pose^-1), a.a - b.a, a.b - b.b).
Vec8 state_difference(const FrameState& a, const FrameState& b);

}  // namespace d3vo

#pragma once

// Forward evaluation of the self-supervised depth/pose training objective and
// its analytic gradients. Nothing here learns; the evaluator exists so the
// objective can be inspected and its gradients verified.
//
// Poses are target-to-source transforms (points in the target camera mapped
// into the source camera). Brightness parameters use the raw-gain convention
// and transform the target towards each source.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d3vo/geometry.hpp"
#include "d3vo/imaging.hpp"
#include "d3vo/maps.hpp"

namespace d3vo {

struct LossWeights {
  double ssim_mix_alpha = 0.85;
  /// lambda^s = lambda_base / 2^(s-1), s = 1 the finest scale.
  double lambda_base = 1e-3;
  double beta = 1e-2;
  int num_scales = 4;
  /// Target pixels at or above this intensity are excluded.
  double overexposure_threshold = 0.98;

  void validate() const;
  double lambda_at(int scale_one_based) const;
};

/// r = mix/2 (1 - SSIM(a,b)) + (1 - mix)|a - b| per pixel.
Raster photometric_residual(const Raster& a, const Raster& b, double mix);

struct WarpResult {
  Raster image;  ///< zero where invalid
  std::vector<std::uint8_t> valid;
  std::size_t valid_count() const;
};

/// Synthesizes the target view by sampling `source` at the reprojection of
/// every target pixel with valid depth.
WarpResult warp_source_to_target(const Raster& source, const DepthMap& target_depth,
                                 const Se3& target_to_source, const Intrinsics& intrinsics,
                                 Exec exec = default_exec());

/// a*I + b without clamping.
Raster apply_brightness(const Raster& img, const BrightnessParams& params);
/// a*I + b clamped to [0,1] (display path).
Image apply_brightness_display(const Image& img, const BrightnessParams& params);

/// Inputs of one scale of the objective.
struct ScaleInput {
  Image target;
  std::vector<Image> sources;
  DepthMap depth;
  std::optional<UncertaintyMap> uncertainty;
  Intrinsics intrinsics;
};

/// The whole objective: per-scale rasters plus per-source poses and
/// brightness parameters shared across scales.
struct LossProblem {
  std::vector<ScaleInput> scales;
  std::vector<Se3> poses;
  std::vector<BrightnessParams> brightness;
  LossWeights weights;
};

struct SelfLossMap {
  Raster min_residual;             ///< per-pixel minimum over sources
  std::vector<std::int32_t> argmin;  ///< -1 where no source is valid
  std::size_t valid_pixels = 0;
};

/// Per-pixel minimum residual between the brightness-transformed target and
/// each warped source. Ties go to the lowest source index.
SelfLossMap self_loss_map(const ScaleInput& scale, std::span<const Se3> poses,
                          std::span<const BrightnessParams> brightness,
                          const LossWeights& weights);

/// Mean of the per-pixel minimum over pixels valid in at least one source.
/// Throws InputError when no pixel is valid.
double self_loss(const ScaleInput& scale, std::span<const Se3> poses,
                 std::span<const BrightnessParams> brightness, const LossWeights& weights);

/// Mean over pixels of r/sigma + log sigma. `mask` (optional) selects pixels.
double uncertainty_loss(const Raster& residual, const UncertaintyMap& sigma,
                        std::span<const std::uint8_t> mask = {});

/// Edge-aware first-order smoothness of the mean-normalized depth.
double smoothness_loss(const DepthMap& depth, const Raster& img);

double ab_regularizer(std::span<const BrightnessParams> params);

/// Mean over scales of L_self^s + lambda^s (L_smooth^s + beta L_ab), where
/// L_self^s takes the uncertainty-weighted form when the scale has sigma.
double total_loss(const LossProblem& problem);

struct LossGradients {
  std::vector<Raster> depth;  ///< per scale; zero at invalid pixels
  std::vector<Raster> sigma;  ///< per scale; empty when the scale has none
  std::vector<Vec6> pose;     ///< per source, left-perturbation twist
  std::vector<Eigen::Vector2d> brightness;  ///< per source (d/da, d/db)
};

LossGradients loss_gradients(const LossProblem& problem);

/// Discrete branch choices (per-pixel argmin, L1 signs, bilinear cells,
/// smoothness signs). Two evaluations with equal signatures lie on the same
/// smooth piece of the objective.
std::vector<std::int64_t> loss_branch_signature(const LossProblem& problem);

struct GradientCheckReport {
  int checked = 0;
  /// Coordinates whose finite-difference stencil crossed a branch change.
  int skipped = 0;
  int failed = 0;
  /// Largest |analytic - numeric| / tolerance seen.
  double worst_ratio = 0.0;
  std::vector<std::string> failures;
  bool passed() const { return checked > 0 && failed == 0; }
};

/// Compares loss_gradients against central differences of total_loss at
/// `coordinates` random coordinates (depth, sigma, pose, brightness), with
/// step 1e-5 relative and tolerance max(rel_tol |g|, abs_tol).
GradientCheckReport check_loss_gradients(const LossProblem& problem, int coordinates,
                                         std::uint64_t seed, double rel_tol = 1e-3,
                                         double abs_tol = 1e-7);

}  // namespace d3vo

#pragma once

// Flat `key = value` configuration files for the run and synth commands.
// `#` starts a comment; unknown keys and out-of-range values are rejected
// with an InputError naming the key.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "d3vo/backend.hpp"
#include "d3vo/frontend.hpp"
#include "d3vo/synth.hpp"

namespace d3vo {

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// Splits config text into entries. Throws InputError on lines without `=`,
/// empty keys or repeated keys.
std::vector<KeyValue> parse_key_values(std::string_view text);

struct RunConfig {
  double huber_gamma = 9.0 / 255.0;
  double uncertainty_scale_alpha = 0.5;
  double virtual_stereo_lambda = 1.0;
  double pose_weight = 1.0;
  /// Diagonal of the relative pose-prior covariance per frame pair.
  double prior_variance_translation = 1e-4;
  double prior_variance_rotation = 1e-4;
  double stereo_baseline = 0.1;

  int window_capacity = 7;
  int point_budget = 800;
  int cell_size = 16;
  double gradient_median_scale = 1.0;
  double gradient_offset = 2.0 / 255.0;
  int backend_max_iterations = 12;
  double backend_tolerance = 1e-6;
  int backend_max_halvings = 8;
  int backend_coarse_levels = 2;
  double outlier_threshold = 12.0 / 255.0;

  int tracking_levels = 4;
  int tracking_max_iterations = 20;
  int tracking_max_halvings = 8;
  double tracking_tolerance = 1e-6;
  double lost_fraction = 0.1;
  int min_reference_pixels = 200;
  int graph_max_nodes = 2;
  int splat_radius = 1;
  /// Tracking energy above this multiple of the previous frame's reruns the
  /// alignment from constant-velocity and zero-motion starts.
  double retrack_threshold = 1.5;
  /// Largest accepted |a - a_predicted| of a tracked frame (log gain); beyond
  /// it the alignment counts as failed.
  double max_gain_deviation = 1.0;

  /// Keyframe when the mean displacement exceeds this fraction of the width
  /// or the valid-pixel fraction drops below keyframe_valid_fraction.
  double keyframe_displacement = 0.02;
  double keyframe_valid_fraction = 0.7;

  bool use_depth_prior = true;  ///< Dd
  bool use_pose_prior = true;   ///< Dp
  bool use_uncertainty = true;  ///< Du

  /// Throws InputError naming the key.
  void set(std::string_view key, std::string_view value);
  void validate() const;
  /// Every key with its current value, one per line; parses back to *this.
  std::string to_text() const;
  static std::vector<std::string> keys();

  BackendConfig backend() const;
  TrackingConfig tracking() const;
  PoseCovariance covariance() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
};

struct SynthConfig {
  int frames = 20;
  int width = 320;
  int height = 240;
  double focal = 265.0;
  double step = 0.03;
  double frame_interval = 0.1;
  bool reflective = false;
  double gain_amplitude = 0.0;
  double bias_amplitude = 0.0;
  double depth_noise = 0.0;  ///< log-depth sigma
  double depth_noise_wavelength = 40.0;
  double pose_noise_translation = 0.0;
  double pose_noise_rotation = 0.0;
  std::string uncertainty = "true_residual";  ///< or "constant"
  double uncertainty_constant = 0.05;
  std::string brightness = "exact";  ///< exact, noisy or identity
  double brightness_noise = 0.0;

  void set(std::string_view key, std::string_view value);
  void validate() const;
  std::string to_text() const;

  Intrinsics intrinsics() const;
  Corruption corruption(std::uint64_t seed) const;

  static SynthConfig parse(std::string_view text);
  static SynthConfig load(const std::filesystem::path& path);
};

}  // namespace d3vo

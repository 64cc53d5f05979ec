#pragma once

// Procedural room renderer and sequence generator used as ground truth by the
// tests and the acceptance suite.

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "d3vo/eval.hpp"
#include "d3vo/geometry.hpp"
#include "d3vo/imaging.hpp"
#include "d3vo/maps.hpp"
#include "d3vo/selfsup.hpp"

namespace d3vo {

/// Infinite plane n.X = offset carrying a value-noise texture.
struct TexturedPlane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  std::uint32_t texture_seed = 0;
  double albedo_lo = 0.15;
  double albedo_hi = 0.8;
  /// Lattice spacing of the coarsest octave, meters.
  double cell_size = 0.5;
};

/// Disk on a plane whose intensity gains a view-dependent highlight.
struct ReflectivePatch {
  std::size_t plane = 0;
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
  double strength = 0.35;
  double shininess = 30.0;
};

/// Per-frame exposure: I_k = gain_k * radiance + bias_k.
struct BrightnessSchedule {
  double gain_amplitude = 0.0;
  double bias_amplitude = 0.0;
  double period = 17.0;
  BrightnessParams at(std::size_t frame) const;
};

struct Scene {
  std::vector<TexturedPlane> planes;
  std::vector<ReflectivePatch> patches;
  Vec3 light = Vec3(0.3, -1.0, 0.5);
  BrightnessSchedule schedule;
  /// Radiance samples per pixel side, averaged over the pixel footprint.
  int supersampling = 3;
};

/// Closed box about 5 m across (y points down, the camera starts at the origin
/// looking along +z).
Scene make_room_scene(std::uint32_t seed, bool reflective = false);

struct Rendering {
  Image image;
  DepthMap depth;
  std::vector<std::uint8_t> reflective;  ///< pixels inside a reflective patch
};

/// Analytic ray casting. Pixels that hit no plane get invalid depth and zero
/// intensity. `exposure` is applied on top of the radiance.
Rendering render(const Scene& scene, const Se3& world_to_camera, const Intrinsics& intrinsics,
                 const BrightnessParams& exposure = {}, Exec exec = default_exec());

/// Smooth hand-held style motion around the origin (world-to-camera poses)
/// with varying speed; `step` is the typical per-frame translation in meters.
std::vector<Se3> desk_trajectory(int frames, std::uint32_t seed, double step = 0.03);

struct Corruption {
  /// Multiplicative log-normal depth noise: log depth is perturbed by
  /// depth_log_sigma times a smooth unit-variance field (see
  /// smooth_gaussian_field) drawn per frame.
  double depth_log_sigma = 0.0;
  double depth_noise_wavelength = 40.0;  ///< pixels
  double pose_sigma_translation = 0.0;
  double pose_sigma_rotation = 0.0;

  enum class Uncertainty { TrueResidual, Constant };
  Uncertainty uncertainty = Uncertainty::TrueResidual;
  double uncertainty_constant = 0.05;
  double uncertainty_floor = 0.01;

  enum class Brightness { Exact, Noisy, Identity };
  Brightness brightness = Brightness::Exact;
  double brightness_sigma = 0.0;

  std::uint64_t seed = 0;
};

/// Zero-mean field with unit marginal variance built from random plane
/// waves whose wavelengths lie in [wavelength, 3 wavelength] pixels.
Raster smooth_gaussian_field(int width, int height, double wavelength, std::mt19937_64& rng);

struct SequenceSpec {
  Intrinsics intrinsics;
  std::vector<Se3> world_to_camera;
  double frame_interval = 0.1;
};

struct GeneratedSequence {
  std::filesystem::path manifest;
  std::filesystem::path ground_truth;
  Trajectory trajectory{PoseConvention::WorldToCamera};
  std::vector<BrightnessParams> exposures;
  /// True relative poses (frame k-1 to k); identity for the first frame.
  std::vector<Se3> true_relative;
  std::vector<Rendering> renderings;
};

/// Renders every pose, corrupts the priors and writes images (16-bit raw),
/// prior rasters, the manifest, camera.txt and a TUM ground-truth file into
/// `out_dir`.
GeneratedSequence generate_sequence(const Scene& scene, const SequenceSpec& spec,
                                    const Corruption& corruption,
                                    const std::filesystem::path& out_dir);

/// Small rendered problem for the loss evaluator: a target frame between two
/// source frames, noisy depth, poses and brightness near the truth.
LossProblem synthetic_loss_problem(std::uint32_t seed, int size, int scales, int sources,
                                   bool with_uncertainty);

}  // namespace d3vo

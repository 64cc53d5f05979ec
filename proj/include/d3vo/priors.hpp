#pragma once

// Per-frame network predictions (depth, uncertainty, relative pose and
// brightness) loaded from a manifest, plus the least-squares brightness
// baseline.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d3vo/geometry.hpp"
#include "d3vo/imaging.hpp"
#include "d3vo/maps.hpp"

namespace d3vo {

struct FrameBundle {
  double timestamp = 0.0;
  Image image;
  DepthMap depth;
  UncertaintyMap uncertainty;
  /// Relative to the previous frame; identity for the first frame.
  PosePrior pose_prior;
  /// Maps the previous frame's intensities onto this frame's.
  BrightnessParams brightness_prior;
};

/// One manifest line. Paths are relative to the manifest's directory unless
/// absolute.
struct ManifestEntry {
  double timestamp = 0.0;
  std::string image;
  std::string depth;
  std::string uncertainty;
  Vec6 pose_twist = Vec6::Zero();
  BrightnessParams brightness;
};

struct LoadedSequence {
  std::vector<FrameBundle> frames;
  /// Depth entries masked for failing positivity, summed over frames.
  std::size_t masked_depth = 0;
  /// Uncertainty entries that failed positivity; their depth is masked too.
  std::size_t masked_uncertainty = 0;
  std::vector<std::string> warnings;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Throws InputError naming the offending frame on missing files, dimension
/// mismatches or non-increasing timestamps.
LoadedSequence load_sequence(const std::filesystem::path& manifest,
                             const PoseCovariance& covariance = PoseCovariance());

/// Camera file beside the manifest: one line `fx fy cx cy width height`,
/// `#` starts a comment.
Intrinsics read_camera(const std::filesystem::path& path);
void write_camera(const std::filesystem::path& path, const Intrinsics& intrinsics);

/// Float32 raster with the 16-byte "D3PR" header.
Raster load_prior_raster(const std::filesystem::path& path);
void save_prior_raster(const Raster& raster, const std::filesystem::path& path);

struct Correspondence {
  Vec2 target;
  Vec2 source;
};

/// (a, b) minimizing sum (a I_t[p] + b - I_s[q])^2 over correspondences whose
/// samples are valid. Throws NumericalError when the target samples are
/// constant or fewer than two pairs are usable.
BrightnessParams estimate_affine_ls(const Raster& target, const Raster& source,
                                    std::span<const Correspondence> correspondences);

}  // namespace d3vo

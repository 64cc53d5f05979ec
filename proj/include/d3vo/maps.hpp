#pragma once

// Per-pixel prior rasters and brightness parameters shared by the loss
// evaluator, the prior loader and the estimator.

#include <cstdint>
#include <span>
#include <vector>

#include "d3vo/imaging.hpp"

namespace d3vo {

/// Affine brightness transform I' = a*I + b (raw gain). The estimator works
/// with log gains; see to_log_gain().
struct BrightnessParams {
  double a = 1.0;
  double b = 0.0;

  void validate() const;
  BrightnessParams inverse() const { return {1.0 / a, -b / a}; }
  /// (this o first): apply `first`, then this.
  BrightnessParams after(const BrightnessParams& first) const { return {a * first.a, a * first.b + b}; }
  double apply(double intensity) const { return a * intensity + b; }
};

/// Depth in meters with a validity mask; valid entries are positive and
/// finite.
class DepthMap {
 public:
  DepthMap() = default;
  /// Entries that are non-positive or non-finite are masked invalid.
  explicit DepthMap(Raster depth);
  DepthMap(Raster depth, std::vector<std::uint8_t> valid);

  int width() const { return depth_.width(); }
  int height() const { return depth_.height(); }
  const Raster& raster() const { return depth_; }
  double at(int x, int y) const { return depth_.at(x, y); }
  bool valid(int x, int y) const { return valid_[depth_.index(x, y)] != 0; }
  bool valid(std::size_t i) const { return valid_[i] != 0; }
  std::span<const std::uint8_t> mask() const { return valid_; }
  std::size_t valid_count() const;
  /// Number of entries masked because they were not positive and finite.
  std::size_t rejected() const { return rejected_; }

  void invalidate(int x, int y) { valid_[depth_.index(x, y)] = 0; }
  /// Throws InputError unless `depth` is positive and finite.
  void set(int x, int y, double depth);

 private:
  Raster depth_;
  std::vector<std::uint8_t> valid_;
  std::size_t rejected_ = 0;
};

/// Photometric uncertainty sigma (intensity units), strictly positive.
class UncertaintyMap {
 public:
  UncertaintyMap() = default;
  /// Throws InputError on any non-positive or non-finite entry.
  explicit UncertaintyMap(Raster sigma);

  int width() const { return sigma_.width(); }
  int height() const { return sigma_.height(); }
  const Raster& raster() const { return sigma_; }
  double at(int x, int y) const { return sigma_.at(x, y); }
  /// Throws InputError unless `sigma` is positive and finite.
  void set(int x, int y, double sigma);

 private:
  Raster sigma_;
};

/// Downsample depth by averaging the valid entries of each 2x2 block.
DepthMap downsample(const DepthMap& depth);

}  // namespace d3vo

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "d3vo/geometry.hpp"
#include "d3vo/parallel.hpp"

namespace d3vo {

/// Row-major grid of reals without range constraints (depth, sigma,
/// residual and SSIM maps, unclamped brightness-transformed intensities).
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, double fill = 0.0);
  Raster(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  bool same_shape(const Raster& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  double at(int x, int y) const { return values_[index(x, y)]; }
  double& at(int x, int y) { return values_[index(x, y)]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

/// Grayscale intensities in [0,1]; values are clamped on construction and the
/// image is immutable afterwards.
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill);
  /// Throws InputError on non-finite values or size mismatch.
  Image(int width, int height, std::vector<double> values);
  explicit Image(const Raster& raster);

  int width() const { return raster_.width(); }
  int height() const { return raster_.height(); }
  double at(int x, int y) const { return raster_.at(x, y); }
  const Raster& raster() const { return raster_; }
  operator const Raster&() const { return raster_; }  // NOLINT: images sample like rasters

 private:
  Raster raster_;
};

class Pyramid {
 public:
  Pyramid() = default;
  /// Level L is the 2x2 box average of level L-1 with floor-divided size.
  Pyramid(const Image& base, int levels);

  int levels() const { return static_cast<int>(levels_.size()); }
  const Image& level(int l) const { return levels_.at(static_cast<std::size_t>(l)); }

 private:
  std::vector<Image> levels_;
};

/// 2x2 box downsample with floor-divided size.
Raster downsample(const Raster& src);

struct Sample {
  double value = 0.0;
  bool valid = false;
};

struct SampleGrad {
  double value = 0.0;
  Vec2 grad = Vec2::Zero();
  bool valid = false;
};

/// Bilinear interpolation; invalid unless 0 <= x <= w-1 and 0 <= y <= h-1.
Sample bilinear_sample(const Raster& img, const Vec2& p);
/// Bilinear value together with the exact derivative of the interpolant
/// (taken from the cell floor(p) on cell boundaries).
SampleGrad bilinear_sample_grad(const Raster& img, const Vec2& p);

/// Intensity gradient of the bilinear interpolant; invalid closer than one
/// pixel to the border.
SampleGrad gradient(const Raster& img, const Vec2& p);

inline constexpr double kSsimC1 = 1e-4;
inline constexpr double kSsimC2 = 9e-4;

/// Per-pixel SSIM over a 3x3 box window with edge replication.
/// Throws InputError on dimension mismatch.
Raster ssim_map(const Raster& a, const Raster& b, Exec exec = default_exec());

/// Per-pixel SSIM statistics of one 3x3 window (shared with the loss
/// gradients).
struct SsimWindow {
  double mu_a, mu_b, var_a, var_b, cov;
  double value() const {
    return ((2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2)) /
           ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
  }
};
SsimWindow ssim_window(const Raster& a, const Raster& b, int x, int y);

/// Edge-replicated neighbour index used by the 3x3 window.
inline int clamp_index(int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

// Image files. PGM (P5, 8/16 bit) and PPM (P6, averaged to gray) by
// extension; anything else is a 16-bit little-endian raw raster with a text
// sidecar "<path>.hdr" holding "width height bit_depth".
Image load_image(const std::filesystem::path& path);
void save_pgm(const Image& img, const std::filesystem::path& path);
void save_raw16(const Image& img, const std::filesystem::path& path);

}  // namespace d3vo

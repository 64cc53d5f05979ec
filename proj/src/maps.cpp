#include "d3vo/maps.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d3vo/errors.hpp"

namespace d3vo {

void BrightnessParams::validate() const {
  if (!(a > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw InputError("brightness params: gain must be positive and both finite");
  }
}

DepthMap::DepthMap(Raster depth) : depth_(std::move(depth)), valid_(depth_.size(), 1) {
  for (std::size_t i = 0; i < depth_.size(); ++i) {
    if (!(depth_[i] > 0.0) || !std::isfinite(depth_[i])) {
      valid_[i] = 0;
      ++rejected_;
    }
  }
}

DepthMap::DepthMap(Raster depth, std::vector<std::uint8_t> valid)
    : depth_(std::move(depth)), valid_(std::move(valid)) {
  if (valid_.size() != depth_.size()) throw InputError("depth map: mask size mismatch");
  for (std::size_t i = 0; i < depth_.size(); ++i) {
    if (valid_[i] && (!(depth_[i] > 0.0) || !std::isfinite(depth_[i]))) {
      valid_[i] = 0;
      ++rejected_;
    }
  }
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

void DepthMap::set(int x, int y, double depth) {
  if (!(depth > 0.0) || !std::isfinite(depth)) throw InputError("depth map: depth must be positive");
  depth_.at(x, y) = depth;
  valid_[depth_.index(x, y)] = 1;
}

void UncertaintyMap::set(int x, int y, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InputError("uncertainty map: sigma must be positive and finite");
  }
  sigma_.at(x, y) = sigma;
}

UncertaintyMap::UncertaintyMap(Raster sigma) : sigma_(std::move(sigma)) {
  for (double s : sigma_.values()) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw InputError("uncertainty map: entries must be positive and finite");
    }
  }
}

DepthMap downsample(const DepthMap& depth) {
  const int w = depth.width() / 2;
  const int h = depth.height() / 2;
  Raster out(w, h);
  std::vector<std::uint8_t> valid(out.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          if (depth.valid(2 * x + dx, 2 * y + dy)) {
            sum += depth.at(2 * x + dx, 2 * y + dy);
            ++n;
          }
        }
      }
      if (n > 0) {
        out.at(x, y) = sum / n;
        valid[out.index(x, y)] = 1;
      }
    }
  }
  return {std::move(out), std::move(valid)};
}

}  // namespace d3vo

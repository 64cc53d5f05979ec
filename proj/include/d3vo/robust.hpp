#pragma once

#include <cmath>

namespace d3vo {

/// |r|^2 inside gamma, gamma (2|r| - gamma) outside.
inline double huber(double r, double gamma) {
  const double a = std::abs(r);
  return a <= gamma ? r * r : gamma * (2.0 * a - gamma);
}

/// IRLS weight w with huber(r) ~ w r^2 locally: 1 inside, gamma/|r| outside.
inline double huber_weight(double r, double gamma) {
  const double a = std::abs(r);
  return a <= gamma ? 1.0 : gamma / a;
}

}  // namespace d3vo

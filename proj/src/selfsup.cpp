#include "d3vo/selfsup.hpp"

#include <algorithm>
#include <cmath>

#include "d3vo/errors.hpp"

namespace d3vo {

void LossWeights::validate() const {
  if (!(ssim_mix_alpha >= 0.0 && ssim_mix_alpha <= 1.0)) {
    throw InputError("loss weights: ssim_mix_alpha must lie in [0,1]");
  }
  if (num_scales < 1) throw InputError("loss weights: num_scales must be >= 1");
  if (!(lambda_base >= 0.0) || !(beta >= 0.0)) {
    throw InputError("loss weights: lambda_base and beta must be non-negative");
  }
}

double LossWeights::lambda_at(int scale_one_based) const {
  return lambda_base / std::ldexp(1.0, scale_one_based - 1);
}

Raster photometric_residual(const Raster& a, const Raster& b, double mix) {
  if (!a.same_shape(b)) throw InputError("photometric_residual: dimension mismatch");
  const Raster ssim = ssim_map(a, b);
  Raster out(a.width(), a.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * mix * (1.0 - ssim[i]) + (1.0 - mix) * std::abs(a[i] - b[i]);
  }
  return out;
}

std::size_t WarpResult::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

namespace {

struct WarpPoint {
  Vec3 ray;         // K^-1 [u v 1]
  Vec3 in_source;   // point in the source camera
  Vec2 pixel;       // reprojection in the source image
  bool valid = false;
};

WarpPoint warp_pixel(int x, int y, double depth, const Se3& t, const Intrinsics& k,
                     const Raster& source) {
  WarpPoint w;
  w.ray = Vec3((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
  w.in_source = t * (depth * w.ray);
  if (!(w.in_source.z() > 0.0)) return w;
  w.pixel = Vec2(k.fx * w.in_source.x() / w.in_source.z() + k.cx,
                 k.fy * w.in_source.y() / w.in_source.z() + k.cy);
  w.valid = w.pixel.x() >= 0.0 && w.pixel.y() >= 0.0 && w.pixel.x() <= source.width() - 1 &&
            w.pixel.y() <= source.height() - 1;
  return w;
}

void check_scale(const ScaleInput& s, std::size_t n_sources) {
  if (s.sources.empty()) throw InputError("loss: source set is empty");
  if (s.sources.size() != n_sources) throw InputError("loss: pose/brightness count mismatch");
  const int w = s.target.width();
  const int h = s.target.height();
  for (const auto& src : s.sources) {
    if (src.width() != w || src.height() != h) throw InputError("loss: source dimension mismatch");
  }
  if (s.depth.width() != w || s.depth.height() != h) throw InputError("loss: depth dimension mismatch");
  if (s.uncertainty && (s.uncertainty->width() != w || s.uncertainty->height() != h)) {
    throw InputError("loss: uncertainty dimension mismatch");
  }
}

struct ScaleEval {
  std::vector<Raster> transformed;  // brightness-transformed target per source
  std::vector<WarpResult> warped;
  std::vector<Raster> residual;
  SelfLossMap min_map;
};

ScaleEval evaluate_scale(const ScaleInput& s, std::span<const Se3> poses,
                         std::span<const BrightnessParams> brightness, const LossWeights& weights) {
  check_scale(s, poses.size());
  if (brightness.size() != poses.size()) throw InputError("loss: brightness count mismatch");
  ScaleEval ev;
  const std::size_t n = s.target.raster().size();
  for (std::size_t k = 0; k < poses.size(); ++k) {
    ev.transformed.push_back(apply_brightness(s.target, brightness[k]));
    ev.warped.push_back(warp_source_to_target(s.sources[k], s.depth, poses[k], s.intrinsics));
    ev.residual.push_back(
        photometric_residual(ev.transformed.back(), ev.warped.back().image, weights.ssim_mix_alpha));
  }
  ev.min_map.min_residual = Raster(s.target.width(), s.target.height());
  ev.min_map.argmin.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (s.target.raster()[i] >= weights.overexposure_threshold) continue;
    double best = 0.0;
    int arg = -1;
    for (std::size_t k = 0; k < poses.size(); ++k) {
      if (!ev.warped[k].valid[i]) continue;
      if (arg < 0 || ev.residual[k][i] < best) {
        best = ev.residual[k][i];
        arg = static_cast<int>(k);
      }
    }
    if (arg >= 0) {
      ev.min_map.min_residual[i] = best;
      ev.min_map.argmin[i] = arg;
      ++ev.min_map.valid_pixels;
    }
  }
  return ev;
}

double scale_self_term(const ScaleInput& s, const SelfLossMap& m) {
  if (m.valid_pixels == 0) throw InputError("loss: no pixel is valid in any source");
  double sum = 0.0;
  for (std::size_t i = 0; i < m.argmin.size(); ++i) {
    if (m.argmin[i] < 0) continue;
    if (s.uncertainty) {
      const double sigma = s.uncertainty->raster()[i];
      sum += m.min_residual[i] / sigma + std::log(sigma);
    } else {
      sum += m.min_residual[i];
    }
  }
  return sum / static_cast<double>(m.valid_pixels);
}

struct SmoothPair {
  std::size_t i, j;
  double edge;  // exp(-|dI|)
};

std::vector<SmoothPair> smooth_pairs(const DepthMap& depth, const Raster& img) {
  std::vector<SmoothPair> pairs;
  const int w = depth.width();
  const int h = depth.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = img.index(x, y);
      if (!depth.valid(i)) continue;
      if (x + 1 < w && depth.valid(i + 1)) {
        pairs.push_back({i, i + 1, std::exp(-std::abs(img[i + 1] - img[i]))});
      }
      if (y + 1 < h && depth.valid(x, y + 1)) {
        const std::size_t j = img.index(x, y + 1);
        pairs.push_back({i, j, std::exp(-std::abs(img[j] - img[i]))});
      }
    }
  }
  return pairs;
}

double depth_mean(const DepthMap& depth) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < depth.raster().size(); ++i) {
    if (depth.valid(i)) {
      sum += depth.raster()[i];
      ++n;
    }
  }
  if (n == 0) throw InputError("smoothness_loss: no valid depth");
  return sum / static_cast<double>(n);
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

WarpResult warp_source_to_target(const Raster& source, const DepthMap& target_depth,
                                 const Se3& target_to_source, const Intrinsics& intrinsics,
                                 Exec exec) {
  const int w = target_depth.width();
  const int h = target_depth.height();
  WarpResult out{Raster(w, h), std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 0)};
  parallel_for(exec, h, [&](std::int64_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < w; ++x) {
      if (!target_depth.valid(x, y)) continue;
      const WarpPoint wp =
          warp_pixel(x, y, target_depth.at(x, y), target_to_source, intrinsics, source);
      if (!wp.valid) continue;
      const Sample s = bilinear_sample(source, wp.pixel);
      if (!s.valid) continue;
      out.image.at(x, y) = s.value;
      out.valid[out.image.index(x, y)] = 1;
    }
  });
  return out;
}

Raster apply_brightness(const Raster& img, const BrightnessParams& params) {
  Raster out(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = params.apply(img[i]);
  return out;
}

Image apply_brightness_display(const Image& img, const BrightnessParams& params) {
  return Image(apply_brightness(img, params));
}

SelfLossMap self_loss_map(const ScaleInput& scale, std::span<const Se3> poses,
                          std::span<const BrightnessParams> brightness,
                          const LossWeights& weights) {
  return evaluate_scale(scale, poses, brightness, weights).min_map;
}

double self_loss(const ScaleInput& scale, std::span<const Se3> poses,
                 std::span<const BrightnessParams> brightness, const LossWeights& weights) {
  ScaleInput plain = scale;
  plain.uncertainty.reset();
  return scale_self_term(plain, self_loss_map(plain, poses, brightness, weights));
}

double uncertainty_loss(const Raster& residual, const UncertaintyMap& sigma,
                        std::span<const std::uint8_t> mask) {
  if (residual.width() != sigma.width() || residual.height() != sigma.height()) {
    throw InputError("uncertainty_loss: dimension mismatch");
  }
  if (!mask.empty() && mask.size() != residual.size()) {
    throw InputError("uncertainty_loss: mask size mismatch");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double s = sigma.raster()[i];
    sum += residual[i] / s + std::log(s);
    ++n;
  }
  if (n == 0) throw InputError("uncertainty_loss: no valid pixels");
  return sum / static_cast<double>(n);
}

double smoothness_loss(const DepthMap& depth, const Raster& img) {
  if (depth.width() != img.width() || depth.height() != img.height()) {
    throw InputError("smoothness_loss: dimension mismatch");
  }
  const double mean = depth_mean(depth);
  double sum = 0.0;
  for (const SmoothPair& p : smooth_pairs(depth, img)) {
    sum += std::abs(depth.raster()[p.j] - depth.raster()[p.i]) / mean * p.edge;
  }
  return sum;
}

double ab_regularizer(std::span<const BrightnessParams> params) {
  double sum = 0.0;
  for (const auto& p : params) sum += (p.a - 1.0) * (p.a - 1.0) + p.b * p.b;
  return sum;
}

double total_loss(const LossProblem& problem) {
  problem.weights.validate();
  if (problem.scales.empty()) throw InputError("total_loss: no scales");
  const double lab = ab_regularizer(problem.brightness);
  double total = 0.0;
  for (std::size_t s = 0; s < problem.scales.size(); ++s) {
    const ScaleInput& in = problem.scales[s];
    const ScaleEval ev = evaluate_scale(in, problem.poses, problem.brightness, problem.weights);
    const double self = scale_self_term(in, ev.min_map);
    const double reg = smoothness_loss(in.depth, in.target) + problem.weights.beta * lab;
    total += self + problem.weights.lambda_at(static_cast<int>(s) + 1) * reg;
  }
  return total / static_cast<double>(problem.scales.size());
}

LossGradients loss_gradients(const LossProblem& problem) {
  problem.weights.validate();
  if (problem.scales.empty()) throw InputError("loss_gradients: no scales");
  const std::size_t n_src = problem.poses.size();
  const double inv_scales = 1.0 / static_cast<double>(problem.scales.size());
  const double mix = problem.weights.ssim_mix_alpha;

  LossGradients out;
  out.pose.assign(n_src, Vec6::Zero());
  out.brightness.assign(n_src, Eigen::Vector2d::Zero());

  for (std::size_t s = 0; s < problem.scales.size(); ++s) {
    const ScaleInput& in = problem.scales[s];
    const ScaleEval ev = evaluate_scale(in, problem.poses, problem.brightness, problem.weights);
    const SelfLossMap& mm = ev.min_map;
    if (mm.valid_pixels == 0) throw InputError("loss: no pixel is valid in any source");
    const int w = in.target.width();
    const int h = in.target.height();
    const double inv_n = 1.0 / static_cast<double>(mm.valid_pixels);

    Raster depth_grad(w, h);
    Raster sigma_grad = in.uncertainty ? Raster(w, h) : Raster();
    std::vector<Raster> grad_a(n_src, Raster(w, h));
    std::vector<Raster> grad_b(n_src, Raster(w, h));

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = in.target.raster().index(x, y);
        const int k = mm.argmin[i];
        if (k < 0) continue;
        double coeff = inv_scales * inv_n;
        if (in.uncertainty) {
          const double sigma = in.uncertainty->raster()[i];
          sigma_grad[i] = inv_scales * inv_n * (1.0 / sigma - mm.min_residual[i] / (sigma * sigma));
          coeff /= sigma;
        }
        const Raster& a = ev.transformed[static_cast<std::size_t>(k)];
        const Raster& b = ev.warped[static_cast<std::size_t>(k)].image;
        Raster& ga = grad_a[static_cast<std::size_t>(k)];
        Raster& gb = grad_b[static_cast<std::size_t>(k)];

        // SSIM term: d/dSSIM = -mix/2.
        const SsimWindow sw = ssim_window(a, b, x, y);
        const double a1 = 2.0 * sw.mu_a * sw.mu_b + kSsimC1;
        const double a2 = 2.0 * sw.cov + kSsimC2;
        const double b1 = sw.mu_a * sw.mu_a + sw.mu_b * sw.mu_b + kSsimC1;
        const double b2 = sw.var_a + sw.var_b + kSsimC2;
        const double den = b1 * b2;
        const double ssim = a1 * a2 / den;
        const double c_ssim = -0.5 * mix * coeff;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = clamp_index(y + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = clamp_index(x + dx, w);
            const std::size_t e = a.index(xx, yy);
            const double dmu = 1.0 / 9.0;
            // wrt a_e
            {
              const double dvar = 2.0 * (a[e] - sw.mu_a) / 9.0;
              const double dcov = (b[e] - sw.mu_b) / 9.0;
              const double dnum = 2.0 * sw.mu_b * dmu * a2 + a1 * 2.0 * dcov;
              const double dden = 2.0 * sw.mu_a * dmu * b2 + b1 * dvar;
              ga[e] += c_ssim * (dnum - ssim * dden) / den;
            }
            // wrt b_e
            {
              const double dvar = 2.0 * (b[e] - sw.mu_b) / 9.0;
              const double dcov = (a[e] - sw.mu_a) / 9.0;
              const double dnum = 2.0 * sw.mu_a * dmu * a2 + a1 * 2.0 * dcov;
              const double dden = 2.0 * sw.mu_b * dmu * b2 + b1 * dvar;
              gb[e] += c_ssim * (dnum - ssim * dden) / den;
            }
          }
        }
        // L1 term.
        const double sg = sign_of(a[i] - b[i]);
        ga[i] += coeff * (1.0 - mix) * sg;
        gb[i] -= coeff * (1.0 - mix) * sg;
      }
    }

    for (std::size_t k = 0; k < n_src; ++k) {
      const Raster& ga = grad_a[k];
      for (std::size_t i = 0; i < ga.size(); ++i) {
        out.brightness[k].x() += ga[i] * in.target.raster()[i];
        out.brightness[k].y() += ga[i];
      }
      const Raster& gb = grad_b[k];
      const Raster& src = in.sources[k];
      const Mat3 rot = problem.poses[k].rotation();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = gb.index(x, y);
          if (!ev.warped[k].valid[i] || gb[i] == 0.0) continue;
          const WarpPoint wp = warp_pixel(x, y, in.depth.at(x, y), problem.poses[k], in.intrinsics, src);
          const SampleGrad sg = bilinear_sample_grad(src, wp.pixel);
          const Eigen::RowVector3d j_point =
              sg.grad.transpose() * project_jacobian(wp.in_source, in.intrinsics);
          depth_grad[i] += gb[i] * j_point.dot(rot * wp.ray);
          Mat36 d_point;
          d_point << Mat3::Identity(), -skew(wp.in_source);
          out.pose[k] += gb[i] * (j_point * d_point).transpose();
        }
      }
    }

    // Regularizers.
    const double reg_w = inv_scales * problem.weights.lambda_at(static_cast<int>(s) + 1);
    for (std::size_t k = 0; k < n_src; ++k) {
      out.brightness[k].x() += reg_w * problem.weights.beta * 2.0 * (problem.brightness[k].a - 1.0);
      out.brightness[k].y() += reg_w * problem.weights.beta * 2.0 * problem.brightness[k].b;
    }
    const double mean = depth_mean(in.depth);
    Raster g_norm(w, h);  // d L_smooth / d (normalized depth)
    for (const SmoothPair& p : smooth_pairs(in.depth, in.target)) {
      const double sg = sign_of(in.depth.raster()[p.j] - in.depth.raster()[p.i]) * p.edge;
      g_norm[p.j] += sg;
      g_norm[p.i] -= sg;
    }
    double weighted = 0.0;
    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < g_norm.size(); ++i) {
      if (!in.depth.valid(i)) continue;
      weighted += g_norm[i] * in.depth.raster()[i] / mean;
      ++n_valid;
    }
    for (std::size_t i = 0; i < g_norm.size(); ++i) {
      if (!in.depth.valid(i)) continue;
      depth_grad[i] += reg_w * (g_norm[i] / mean - weighted / (mean * static_cast<double>(n_valid)));
    }

    out.depth.push_back(std::move(depth_grad));
    out.sigma.push_back(std::move(sigma_grad));
  }
  return out;
}

std::vector<std::int64_t> loss_branch_signature(const LossProblem& problem) {
  std::vector<std::int64_t> sig;
  for (const ScaleInput& in : problem.scales) {
    const ScaleEval ev = evaluate_scale(in, problem.poses, problem.brightness, problem.weights);
    for (std::size_t i = 0; i < ev.min_map.argmin.size(); ++i) {
      const int k = ev.min_map.argmin[i];
      sig.push_back(k);
      if (k >= 0) {
        const auto ku = static_cast<std::size_t>(k);
        sig.push_back(sign_of(ev.transformed[ku][i] - ev.warped[ku].image[i]));
      }
    }
    for (std::size_t k = 0; k < problem.poses.size(); ++k) {
      for (int y = 0; y < in.target.height(); ++y) {
        for (int x = 0; x < in.target.width(); ++x) {
          if (!in.depth.valid(x, y)) continue;
          const WarpPoint wp = warp_pixel(x, y, in.depth.at(x, y), problem.poses[k],
                                          in.intrinsics, in.sources[k]);
          sig.push_back(wp.valid ? 1 : 0);
          if (wp.valid) {
            sig.push_back(static_cast<std::int64_t>(std::floor(wp.pixel.x())));
            sig.push_back(static_cast<std::int64_t>(std::floor(wp.pixel.y())));
          }
        }
      }
    }
    for (const SmoothPair& p : smooth_pairs(in.depth, in.target)) {
      sig.push_back(sign_of(in.depth.raster()[p.j] - in.depth.raster()[p.i]));
    }
  }
  return sig;
}

}  // namespace d3vo

#include "d3vo/backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>

#include "d3vo/errors.hpp"

namespace d3vo {

namespace {

constexpr double kMinInverseDepth = 1e-6;
constexpr double kDampingInit = 1e-4;
constexpr int kMinCoarseWidth = 80;
constexpr double kDampingCeiling = 1e8;
constexpr double kAnchorInformation = 1e12;
constexpr double kPlanarityTolerance = 0.0005;

Eigen::Matrix<double, 3, 6> point_jacobian(const Vec3& x) {
  Eigen::Matrix<double, 3, 6> j;
  j.leftCols<3>().setIdentity();
  j.rightCols<3>() = -skew(x);
  return j;
}

// Bilinear sample of an inverse-depth raster; invalid if any corner is a hole.
SampleGrad sample_positive(const Raster& r, const Vec2& p) {
  SampleGrad s = bilinear_sample_grad(r, p);
  if (!s.valid) return s;
  const int x0 = std::min(static_cast<int>(std::floor(p.x())), r.width() - 2);
  const int y0 = std::min(static_cast<int>(std::floor(p.y())), r.height() - 2);
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      if (!(r.at(std::max(x0, 0) + dx, std::max(y0, 0) + dy) > 0.0)) {
        s.valid = false;
        return s;
      }
    }
  }
  return s;
}

// Inverse depth is affine in the pixel coordinates on a plane; candidates whose
// pattern straddles a depth crease or edge are rejected.
bool locally_planar(const DepthMap& depth, int x, int y) {
  if (!depth.valid(x, y)) return false;
  const double rho = 1.0 / depth.at(x, y);
  constexpr int pairs[8][2] = {{2, 0}, {0, 2}, {1, 1}, {1, -1}, {4, 0}, {0, 4}, {3, 3}, {3, -3}};
  for (const auto& o : pairs) {
    if (!depth.raster().contains(x + o[0], y + o[1]) || !depth.raster().contains(x - o[0], y - o[1])) return false;
    if (!depth.valid(x + o[0], y + o[1]) || !depth.valid(x - o[0], y - o[1])) return false;
    const double second = 1.0 / depth.at(x + o[0], y + o[1]) + 1.0 / depth.at(x - o[0], y - o[1]) - 2.0 * rho;
    if (std::abs(second) > kPlanarityTolerance * rho) return false;
  }
  return true;
}

Mat8 marg_jacobian(const Vec8& diff) {
  Mat8 j = Mat8::Identity();
  j.topLeftCorner<6, 6>() = se3_left_jacobian_inverse(diff.head<6>());
  return j;
}

}  // namespace

double uncertainty_weight(double sigma, double alpha) {
  if (!(sigma > 0.0) || !(alpha > 0.0)) throw InputError("uncertainty weight: sigma and alpha must be positive");
  return alpha * alpha / (alpha * alpha + sigma * sigma);
}

FrameState apply_increment(const FrameState& s, const Vec8& d) {
  return {se3_exp(Vec6(d.head<6>())) * s.pose, s.a + d[6], s.b + d[7]};
}

Vec8 state_difference(const FrameState& a, const FrameState& b) {
  Vec8 d;
  d.head<6>() = se3_log_vec(a.pose * b.pose.inverse());
  d[6] = a.a - b.a;
  d[7] = a.b - b.b;
  return d;
}

ResidualTerm photometric_residual_term(const Raster& host_image, const FrameState& host,
                                       const Vec2& pixel, double inv_depth,
                                       const Raster& target_image, const FrameState& target,
                                       const Intrinsics& intrinsics) {
  ResidualTerm term;
  if (!(inv_depth > 0.0)) return term;
  const Se3 rel = target.pose * host.pose.inverse();
  const Mat6 ad = rel.adjoint();
  const double gain = std::exp(target.a - host.a);
  bool in_front = true;
  for (int k = 0; k < kPatternSize; ++k) {
    PatternResidual& out = term.residuals[static_cast<std::size_t>(k)];
    const Vec2 q = pixel + Vec2(kPattern[k][0], kPattern[k][1]);
    const Sample hs = bilinear_sample(host_image, q);
    if (!hs.valid) continue;
    const Vec3 ray((q.x() - intrinsics.cx) / intrinsics.fx, (q.y() - intrinsics.cy) / intrinsics.fy, 1.0);
    const Vec3 xt = rel * Vec3(ray / inv_depth);
    if (!(xt.z() > 0.0)) {
      in_front = false;
      continue;
    }
    const Vec2 pt(intrinsics.fx * xt.x() / xt.z() + intrinsics.cx,
                  intrinsics.fy * xt.y() / xt.z() + intrinsics.cy);
    const SampleGrad ts = bilinear_sample_grad(target_image, pt);
    if (!ts.valid) continue;
    const double centered = hs.value - host.b;
    out.value = (ts.value - target.b) - gain * centered;
    out.valid = true;

    const Eigen::RowVector3d gj = ts.grad.transpose() * project_jacobian(xt, intrinsics);
    const Eigen::Matrix<double, 1, 6> dt = gj * point_jacobian(xt);
    out.d_target.head<6>() = dt;
    out.d_target[6] = -gain * centered;
    out.d_target[7] = -1.0;
    out.d_host.head<6>() = -dt * ad;
    out.d_host[6] = gain * centered;
    out.d_host[7] = gain;
    out.d_inv_depth = gj * (rel.rotation() * (-ray / (inv_depth * inv_depth)));
    ++term.valid_count;
  }
  term.valid = in_front && term.valid_count >= 5;
  return term;
}

ResidualTerm virtual_stereo_term(const Raster& host_image, const Raster& stereo_inv_depth,
                                 const Vec2& pixel, double inv_depth, double baseline,
                                 const Intrinsics& intrinsics) {
  ResidualTerm term;
  if (stereo_inv_depth.empty() || !(inv_depth > 0.0)) return term;
  const double fb = intrinsics.fx * baseline;
  for (int k = 0; k < kPatternSize; ++k) {
    PatternResidual& out = term.residuals[static_cast<std::size_t>(k)];
    const Vec2 q = pixel + Vec2(kPattern[k][0], kPattern[k][1]);
    const Sample hs = bilinear_sample(host_image, q);
    if (!hs.valid) continue;
    const Vec2 right(q.x() - fb * inv_depth, q.y());
    const SampleGrad rs = sample_positive(stereo_inv_depth, right);
    if (!rs.valid) continue;
    const Vec2 back(right.x() + fb * rs.value, q.y());
    const SampleGrad bs = bilinear_sample_grad(host_image, back);
    if (!bs.valid) continue;
    out.value = bs.value - hs.value;
    out.valid = true;
    out.d_inv_depth = bs.grad.x() * (-fb) * (1.0 + fb * rs.grad.x());
    ++term.valid_count;
  }
  term.valid = term.valid_count >= 5;
  return term;
}

Raster stereo_inverse_depth(const DepthMap& left_depth, double baseline, const Intrinsics& intrinsics) {
  const int w = left_depth.width();
  const int h = left_depth.height();
  Raster out(w, h, 0.0);
  const double fb = intrinsics.fx * baseline;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      if (!left_depth.valid(x, y) || !left_depth.valid(x + 1, y)) continue;
      const double r0 = 1.0 / left_depth.at(x, y);
      const double r1 = 1.0 / left_depth.at(x + 1, y);
      const double u0 = x - fb * r0;
      const double u1 = x + 1 - fb * r1;
      if (!(u1 > u0) || u1 - u0 > 2.0) continue;
      const int lo = std::max(0, static_cast<int>(std::ceil(u0)));
      const int hi = std::min(w - 1, static_cast<int>(std::floor(u1)));
      for (int u = lo; u <= hi; ++u) {
        const double t = (u - u0) / (u1 - u0);
        const double rho = (1.0 - t) * r0 + t * r1;
        double& cell = out.at(u, y);
        cell = std::max(cell, rho);
      }
    }
  }
  return out;
}

PoseTerm pose_prior_term(const Se3& prior, const Mat6& information, const Se3& prev, const Se3& cur) {
  PoseTerm t;
  const Se3 m = prior * prev * cur.inverse();
  t.error = se3_log_vec(m);
  const Mat6 jinv = se3_left_jacobian_inverse(t.error);
  t.d_prev = jinv * prior.adjoint();
  t.d_cur = -jinv * m.adjoint();
  t.energy = t.error.dot(information * t.error);
  return t;
}

void BackendConfig::validate() const {
  if (!(huber_gamma > 0.0)) throw InputError("backend: huber_gamma must be positive");
  if (!(uncertainty_scale_alpha > 0.0)) throw InputError("backend: uncertainty_scale_alpha must be positive");
  if (!(virtual_stereo_lambda >= 0.0)) throw InputError("backend: virtual_stereo_lambda must be non-negative");
  if (!(pose_weight >= 0.0)) throw InputError("backend: pose_weight must be non-negative");
  if (!(stereo_baseline > 0.0)) throw InputError("backend: stereo_baseline must be positive");
  if (window_capacity < 2) throw InputError("backend: window_capacity must be at least 2");
  if (point_budget < 1) throw InputError("backend: point_budget must be positive");
  if (cell_size < 2) throw InputError("backend: cell_size must be at least 2");
  if (!(gradient_median_scale >= 0.0) || !(gradient_offset >= 0.0)) {
    throw InputError("backend: gradient threshold parameters must be non-negative");
  }
  if (max_iterations < 1) throw InputError("backend: max_iterations must be positive");
  if (!(relative_tolerance > 0.0)) throw InputError("backend: relative_tolerance must be positive");
  if (max_halvings < 0) throw InputError("backend: max_halvings must be non-negative");
  if (coarse_levels < 0) throw InputError("backend: coarse_levels must be non-negative");
  if (!(outlier_threshold > 0.0)) throw InputError("backend: outlier_threshold must be positive");
}

// Per-point normal-equation blocks, computed independently per point and
// reduced serially in point order.
namespace {

struct ObservationBlock {
  int target = 0;  // keyframe index
  Mat8 hh = Mat8::Zero(), ht = Mat8::Zero(), tt = Mat8::Zero();
  Vec8 gh = Vec8::Zero(), gt = Vec8::Zero(), hr_h = Vec8::Zero(), hr_t = Vec8::Zero();
};

struct PointBlock {
  bool active = false;
  int host = 0;  // keyframe index
  double hrr = 0.0, gr = 0.0, energy = 0.0;
  std::vector<ObservationBlock> obs;
};

struct ReducedPoint {
  std::size_t index = 0;
  double hrr = 0.0, gr = 0.0;
  std::vector<std::pair<int, Vec8>> hkr;  // (block, H_k,rho)
};

void add_hkr(std::vector<std::pair<int, Vec8>>& list, int block, const Vec8& v) {
  for (auto& [b, acc] : list) {
    if (b == block) {
      acc += v;
      return;
    }
  }
  list.emplace_back(block, v);
}

}  // namespace

struct Window::Linearization {
  std::vector<int> block;  // keyframe index -> block, -1 when fixed
  int blocks = 0;
  Eigen::MatrixXd hkk;
  Eigen::VectorXd gk;
  std::vector<ReducedPoint> points;
  double energy = 0.0;
};

Window::Window(const BackendConfig& config, const Intrinsics& intrinsics, Exec exec)
    : config_(config), intrinsics_(intrinsics), exec_(exec) {
  config_.validate();
  intrinsics_.validate();
}

std::size_t Window::active_point_count() const {
  return static_cast<std::size_t>(std::count_if(points_.begin(), points_.end(), [](const ActivePoint& p) {
    return p.status == PointStatus::Active;
  }));
}

int Window::index_of(int id) const {
  for (std::size_t i = 0; i < keyframes_.size(); ++i) {
    if (keyframes_[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

const Keyframe& Window::keyframe(int id) const {
  const int i = index_of(id);
  if (i < 0) throw InputError("window: unknown keyframe id " + std::to_string(id));
  return keyframes_[static_cast<std::size_t>(i)];
}

std::optional<int> Window::gauge_keyframe() const {
  if (marg_dim_ > 0 || keyframes_.empty()) return std::nullopt;
  return keyframes_.front().id;
}

void Window::set_state(int id, const FrameState& state) {
  const int i = index_of(id);
  if (i < 0) throw InputError("window: unknown keyframe id " + std::to_string(id));
  keyframes_[static_cast<std::size_t>(i)].state = state;
}

void Window::set_inverse_depth(std::size_t point, double inv_depth) {
  if (!(inv_depth > 0.0)) throw InputError("window: inverse depth must be positive");
  points_.at(point).inv_depth = inv_depth;
}

void Window::set_point_weight(std::size_t point, double weight) {
  if (!(weight >= 0.0)) throw InputError("window: point weight must be non-negative");
  points_.at(point).weight = weight;
}

std::size_t Window::add_point(const ActivePoint& point) {
  if (index_of(point.host) < 0) throw InputError("window: point host is not in the window");
  if (!(point.inv_depth > 0.0)) throw InputError("window: inverse depth must be positive");
  points_.push_back(point);
  return points_.size() - 1;
}

bool Window::point_in_front(const ActivePoint& p) const { return p.inv_depth > 0.0; }

namespace {

bool excluded(const std::vector<int>& ids, int id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

int Window::observation_count(const ActivePoint& point) const {
  const int h = index_of(point.host);
  if (h < 0) return 0;
  const Keyframe& host = keyframes_[static_cast<std::size_t>(h)];
  int n = 0;
  for (const Keyframe& t : keyframes_) {
    if (t.id == host.id || excluded(excluded_targets_, t.id) || excluded(point.rejected_targets, t.id)) continue;
    if (photometric_residual_term(host.image, host.state, point.pixel, point.inv_depth, t.image, t.state,
                                  intrinsics_).valid) {
      ++n;
    }
  }
  return n;
}

double Window::point_energy(const ActivePoint& p, double* stereo_part) const {
  if (p.status != PointStatus::Active) return 0.0;
  const int h = index_of(p.host);
  if (h < 0) return 0.0;
  const Keyframe& host = keyframes_[static_cast<std::size_t>(h)];
  const double gamma = config_.huber_gamma;
  double e = 0.0;
  for (const Keyframe& t : keyframes_) {
    if (t.id == host.id || excluded(excluded_targets_, t.id) || excluded(p.rejected_targets, t.id)) continue;
    const ResidualTerm term =
        photometric_residual_term(host.image, host.state, p.pixel, p.inv_depth, t.image, t.state, intrinsics_);
    if (!term.valid) continue;
    for (const PatternResidual& r : term.residuals) {
      if (r.valid) e += p.weight * huber(r.value, gamma);
    }
  }
  const double lambda = config_.use_depth_prior ? config_.virtual_stereo_lambda : 0.0;
  if (lambda > 0.0) {
    const ResidualTerm st = virtual_stereo_term(host.image, host.stereo_inv_depth, p.pixel, p.inv_depth,
                                                config_.stereo_baseline, intrinsics_);
    if (st.valid) {
      double s = 0.0;
      for (const PatternResidual& r : st.residuals) {
        if (r.valid) s += p.weight * huber(r.value, gamma);
      }
      e += lambda * s;
      if (stereo_part) *stereo_part += s;
    }
  }
  return e;
}

EnergyBreakdown Window::energy() const {
  EnergyBreakdown out;
  std::vector<double> photo(points_.size(), 0.0), stereo(points_.size(), 0.0);
  parallel_for(exec_, static_cast<std::int64_t>(points_.size()), [&](std::int64_t i) {
    const auto k = static_cast<std::size_t>(i);
    photo[k] = point_energy(points_[k], &stereo[k]);
  });
  for (std::size_t k = 0; k < points_.size(); ++k) {
    out.photometric += photo[k];
    out.stereo += stereo[k];
  }
  if (config_.use_pose_prior) {
    for (const Keyframe& kf : keyframes_) {
      if (!kf.prior) continue;
      const int j = index_of(kf.prior_from);
      if (j < 0) continue;
      out.pose += pose_prior_term(kf.prior->pose, kf.prior->covariance.information(),
                                  keyframes_[static_cast<std::size_t>(j)].state.pose, kf.state.pose)
                      .energy;
    }
  }
  if (marg_dim_ > 0) {
    Eigen::VectorXd d(marg_dim_);
    for (std::size_t m = 0; m < marg_ids_.size(); ++m) {
      d.segment<8>(8 * static_cast<Eigen::Index>(m)) = state_difference(keyframe(marg_ids_[m]).state, marg_lin_[m]);
    }
    out.marginalization = d.dot(marg_h_ * d) + 2.0 * marg_b_.dot(d);
  }
  out.total = out.photometric + config_.pose_weight * out.pose + out.marginalization;
  return out;
}

namespace {

PointBlock linearize_point(const std::vector<Keyframe>& kfs, const std::vector<int>& excluded_ids,
                           const ActivePoint& p, int host_index, const BackendConfig& cfg,
                           const Intrinsics& K) {
  PointBlock out;
  if (p.status != PointStatus::Active || host_index < 0) return out;
  out.active = true;
  out.host = host_index;
  const Keyframe& host = kfs[static_cast<std::size_t>(host_index)];
  const double gamma = cfg.huber_gamma;
  for (std::size_t t = 0; t < kfs.size(); ++t) {
    const Keyframe& target = kfs[t];
    if (static_cast<int>(t) == host_index || excluded(excluded_ids, target.id) || excluded(p.rejected_targets, target.id)) {
      continue;
    }
    const ResidualTerm term =
        photometric_residual_term(host.image, host.state, p.pixel, p.inv_depth, target.image, target.state, K);
    if (!term.valid) continue;
    ObservationBlock ob;
    ob.target = static_cast<int>(t);
    for (const PatternResidual& r : term.residuals) {
      if (!r.valid) continue;
      const double w = p.weight * huber_weight(r.value, gamma);
      out.energy += p.weight * huber(r.value, gamma);
      const Vec8 jh = r.d_host.transpose();
      const Vec8 jt = r.d_target.transpose();
      ob.hh += w * jh * jh.transpose();
      ob.ht += w * jh * jt.transpose();
      ob.tt += w * jt * jt.transpose();
      ob.gh += w * r.value * jh;
      ob.gt += w * r.value * jt;
      ob.hr_h += w * r.d_inv_depth * jh;
      ob.hr_t += w * r.d_inv_depth * jt;
      out.hrr += w * r.d_inv_depth * r.d_inv_depth;
      out.gr += w * r.d_inv_depth * r.value;
    }
    out.obs.push_back(ob);
  }
  const double lambda = cfg.use_depth_prior ? cfg.virtual_stereo_lambda : 0.0;
  if (lambda > 0.0) {
    const ResidualTerm st =
        virtual_stereo_term(host.image, host.stereo_inv_depth, p.pixel, p.inv_depth, cfg.stereo_baseline, K);
    if (st.valid) {
      for (const PatternResidual& r : st.residuals) {
        if (!r.valid) continue;
        const double w = lambda * p.weight * huber_weight(r.value, gamma);
        out.energy += lambda * p.weight * huber(r.value, gamma);
        out.hrr += w * r.d_inv_depth * r.d_inv_depth;
        out.gr += w * r.d_inv_depth * r.value;
      }
    }
  }
  return out;
}

// Reduces point blocks into the keyframe system; H_k,rho kept for the Schur step.
void reduce_points(const std::vector<PointBlock>& blocks, const std::vector<std::size_t>& indices,
                   const std::vector<int>& block_of, Eigen::MatrixXd& h, Eigen::VectorXd& g,
                   std::vector<ReducedPoint>& reduced, double& energy) {
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const PointBlock& pb = blocks[k];
    if (!pb.active) continue;
    energy += pb.energy;
    ReducedPoint rp;
    rp.index = indices[k];
    rp.hrr = pb.hrr;
    rp.gr = pb.gr;
    const int bh = block_of[static_cast<std::size_t>(pb.host)];
    for (const ObservationBlock& ob : pb.obs) {
      const int bt = block_of[static_cast<std::size_t>(ob.target)];
      if (bh >= 0) {
        h.block<8, 8>(8 * bh, 8 * bh) += ob.hh;
        g.segment<8>(8 * bh) += ob.gh;
        add_hkr(rp.hkr, bh, ob.hr_h);
      }
      if (bt >= 0) {
        h.block<8, 8>(8 * bt, 8 * bt) += ob.tt;
        g.segment<8>(8 * bt) += ob.gt;
        add_hkr(rp.hkr, bt, ob.hr_t);
      }
      if (bh >= 0 && bt >= 0) {
        h.block<8, 8>(8 * bh, 8 * bt) += ob.ht;
        h.block<8, 8>(8 * bt, 8 * bh) += ob.ht.transpose();
      }
    }
    reduced.push_back(std::move(rp));
  }
}

struct Step {
  Eigen::VectorXd keyframes;
  std::vector<double> points;
};

// Damped solve of the point-augmented system via the Schur complement on the
// inverse depths. Returns nullopt when the reduced system is not positive
// definite.
std::optional<Step> solve_damped(const Eigen::MatrixXd& hkk, const Eigen::VectorXd& gk,
                                 const std::vector<ReducedPoint>& points, double mu, bool fix_points = false) {
  const Eigen::Index n = hkk.rows();
  Eigen::MatrixXd h = hkk;
  Eigen::VectorXd g = gk;
  for (Eigen::Index i = 0; i < n; ++i) h(i, i) = hkk(i, i) * (1.0 + mu) + 1e-12;
  std::vector<double> hrr(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    const ReducedPoint& p = points[k];
    hrr[k] = p.hrr * (1.0 + mu) + 1e-12;
    if (fix_points || p.hrr < 1e-20) continue;
    for (const auto& [ba, va] : p.hkr) {
      g.segment<8>(8 * ba) -= va * (p.gr / hrr[k]);
      for (const auto& [bb, vb] : p.hkr) h.block<8, 8>(8 * ba, 8 * bb) -= va * vb.transpose() / hrr[k];
    }
  }
  Step step;
  step.keyframes = Eigen::VectorXd::Zero(n);
  if (n > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) return std::nullopt;
    step.keyframes = -llt.solve(g);
    if (!step.keyframes.allFinite()) return std::nullopt;
  }
  step.points.assign(points.size(), 0.0);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const ReducedPoint& p = points[k];
    if (fix_points || p.hrr < 1e-20) continue;
    double rhs = p.gr;
    for (const auto& [b, v] : p.hkr) rhs += v.dot(step.keyframes.segment<8>(8 * b));
    step.points[k] = -rhs / hrr[k];
  }
  return step;
}

}  // namespace

Window::Linearization Window::linearize(bool include_fixed) const {
  Linearization lin;
  const std::optional<int> gauge = include_fixed ? std::nullopt : gauge_keyframe();
  lin.block.assign(keyframes_.size(), -1);
  for (std::size_t i = 0; i < keyframes_.size(); ++i) {
    if (gauge && keyframes_[i].id == *gauge) continue;
    lin.block[i] = lin.blocks++;
  }
  lin.hkk = Eigen::MatrixXd::Zero(8 * lin.blocks, 8 * lin.blocks);
  lin.gk = Eigen::VectorXd::Zero(8 * lin.blocks);

  std::vector<PointBlock> blocks(points_.size());
  std::vector<std::size_t> indices(points_.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  parallel_for(exec_, static_cast<std::int64_t>(points_.size()), [&](std::int64_t i) {
    const auto k = static_cast<std::size_t>(i);
    blocks[k] = linearize_point(keyframes_, excluded_targets_, points_[k], index_of(points_[k].host), config_,
                                intrinsics_);
  });
  reduce_points(blocks, indices, lin.block, lin.hkk, lin.gk, lin.points, lin.energy);

  if (config_.use_pose_prior) {
    const double w = config_.pose_weight;
    for (std::size_t k = 0; k < keyframes_.size(); ++k) {
      const Keyframe& kf = keyframes_[k];
      if (!kf.prior) continue;
      const int j = index_of(kf.prior_from);
      if (j < 0) continue;
      const Mat6 info = kf.prior->covariance.information();
      const PoseTerm t = pose_prior_term(kf.prior->pose, info, keyframes_[static_cast<std::size_t>(j)].state.pose,
                                         kf.state.pose);
      lin.energy += w * t.energy;
      const int bj = lin.block[static_cast<std::size_t>(j)];
      const int bk = lin.block[k];
      if (bj >= 0) {
        lin.hkk.block<6, 6>(8 * bj, 8 * bj) += w * t.d_prev.transpose() * info * t.d_prev;
        lin.gk.segment<6>(8 * bj) += w * t.d_prev.transpose() * info * t.error;
      }
      if (bk >= 0) {
        lin.hkk.block<6, 6>(8 * bk, 8 * bk) += w * t.d_cur.transpose() * info * t.d_cur;
        lin.gk.segment<6>(8 * bk) += w * t.d_cur.transpose() * info * t.error;
      }
      if (bj >= 0 && bk >= 0) {
        const Mat6 cross = w * t.d_prev.transpose() * info * t.d_cur;
        lin.hkk.block<6, 6>(8 * bj, 8 * bk) += cross;
        lin.hkk.block<6, 6>(8 * bk, 8 * bj) += cross.transpose();
      }
    }
  }

  if (marg_dim_ > 0) {
    const auto m = static_cast<Eigen::Index>(marg_ids_.size());
    Eigen::VectorXd d(marg_dim_);
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(marg_dim_, marg_dim_);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vec8 diff = state_difference(keyframe(marg_ids_[static_cast<std::size_t>(i)]).state,
                                         marg_lin_[static_cast<std::size_t>(i)]);
      d.segment<8>(8 * i) = diff;
      j.block<8, 8>(8 * i, 8 * i) = marg_jacobian(diff);
    }
    lin.energy += d.dot(marg_h_ * d) + 2.0 * marg_b_.dot(d);
    const Eigen::MatrixXd hj = j.transpose() * marg_h_ * j;
    const Eigen::VectorXd gj = j.transpose() * (marg_h_ * d + marg_b_);
    for (Eigen::Index a = 0; a < m; ++a) {
      const int ba = lin.block[static_cast<std::size_t>(index_of(marg_ids_[static_cast<std::size_t>(a)]))];
      if (ba < 0) continue;
      lin.gk.segment<8>(8 * ba) += gj.segment<8>(8 * a);
      for (Eigen::Index b = 0; b < m; ++b) {
        const int bb = lin.block[static_cast<std::size_t>(index_of(marg_ids_[static_cast<std::size_t>(b)]))];
        if (bb < 0) continue;
        lin.hkk.block<8, 8>(8 * ba, 8 * bb) += hj.block<8, 8>(8 * a, 8 * b);
      }
    }
  }
  return lin;
}

std::map<int, Vec8> Window::linear_step() const {
  const Linearization lin = linearize(false);
  const std::optional<Step> step = solve_damped(lin.hkk, lin.gk, lin.points, 0.0);
  if (!step) throw NumericalError("window: normal equations are not positive definite");
  std::map<int, Vec8> out;
  for (std::size_t i = 0; i < keyframes_.size(); ++i) {
    const int b = lin.block[i];
    out[keyframes_[i].id] = b >= 0 ? Vec8(step->keyframes.segment<8>(8 * b)) : Vec8::Zero();
  }
  return out;
}

namespace {

// Nearest-sample decimation; inverse depth does not depend on resolution.
Raster subsample(const Raster& fine, int level) {
  if (fine.size() == 0) return fine;
  const int s = 1 << level;
  Raster out(fine.width() >> level, fine.height() >> level);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.at(x, y) = fine.at(s * x + s / 2, s * y + s / 2);
  return out;
}

}  // namespace

SolveReport Window::optimize() {
  const double e0 = energy_total();
  if (keyframes_.empty() || e0 == 0.0) return optimize_level();
  int levels = 0;
  while (levels < config_.coarse_levels && (intrinsics_.width >> (levels + 1)) >= kMinCoarseWidth) ++levels;
  if (levels > 0) {
    Window coarse = *this;
    for (int l = levels; l >= 1; --l) {
      const double s = std::ldexp(1.0, l);
      coarse.intrinsics_ = intrinsics_.at_level(l);
      for (std::size_t i = 0; i < keyframes_.size(); ++i) {
        coarse.keyframes_[i].image = Pyramid(keyframes_[i].image, l + 1).level(l);
        coarse.keyframes_[i].stereo_inv_depth = subsample(keyframes_[i].stereo_inv_depth, l);
      }
      for (std::size_t k = 0; k < points_.size(); ++k) {
        coarse.points_[k].pixel = (points_[k].pixel.array() + 0.5) / s - 0.5;
      }
      coarse.optimize_level(true);
    }
    Window refined = *this;
    for (std::size_t i = 0; i < keyframes_.size(); ++i) refined.keyframes_[i].state = coarse.keyframes_[i].state;
    for (std::size_t k = 0; k < points_.size(); ++k) refined.points_[k].inv_depth = coarse.points_[k].inv_depth;
    if (refined.energy_total() < e0) {
      SolveReport r = refined.optimize_level();
      r.initial_energy = e0;
      *this = std::move(refined);
      return r;
    }
  }
  return optimize_level();
}

SolveReport Window::optimize_level(bool fix_points) {
  SolveReport report;
  double e = energy_total();
  report.initial_energy = e;
  report.final_energy = e;
  if (keyframes_.empty() || e == 0.0) {
    report.converged = true;
    return report;
  }
  double mu = kDampingInit;
  for (int it = 0; it < config_.max_iterations; ++it) {
    ++report.iterations;
    const Linearization lin = linearize(false);
    const std::vector<FrameState> saved_states = [&] {
      std::vector<FrameState> s;
      for (const Keyframe& kf : keyframes_) s.push_back(kf.state);
      return s;
    }();
    std::vector<double> saved_depths(lin.points.size());
    for (std::size_t k = 0; k < lin.points.size(); ++k) saved_depths[k] = points_[lin.points[k].index].inv_depth;

    auto restore = [&] {
      for (std::size_t i = 0; i < keyframes_.size(); ++i) keyframes_[i].state = saved_states[i];
      for (std::size_t k = 0; k < lin.points.size(); ++k) points_[lin.points[k].index].inv_depth = saved_depths[k];
    };

    bool accepted = false;
    double e_new = e;
    while (!accepted && mu <= kDampingCeiling) {
      const std::optional<Step> step = solve_damped(lin.hkk, lin.gk, lin.points, mu, fix_points);
      if (!step) {
        mu *= 10.0;
        continue;
      }
      double scale = 1.0;
      for (int half = 0; half <= config_.max_halvings; ++half, scale *= 0.5) {
        bool ok = true;
        for (std::size_t i = 0; i < keyframes_.size(); ++i) {
          const int b = lin.block[i];
          if (b >= 0) keyframes_[i].state = apply_increment(saved_states[i], scale * step->keyframes.segment<8>(8 * b));
        }
        for (std::size_t k = 0; k < lin.points.size(); ++k) {
          const double rho = saved_depths[k] + scale * step->points[k];
          if (!(rho > kMinInverseDepth)) ok = false;
          points_[lin.points[k].index].inv_depth = rho;
        }
        if (ok) {
          e_new = energy_total();
          if (e_new < e) {
            accepted = true;
            break;
          }
        }
        ++report.rejected_steps;
        restore();
      }
      if (!accepted) mu *= 10.0;
    }
    if (!accepted) {
      if (!solve_damped(lin.hkk, lin.gk, lin.points, kDampingCeiling)) {
        throw NumericalError("window: reduced system indefinite at the damping ceiling");
      }
      report.converged = true;
      break;
    }
    ++report.accepted_steps;
    if (e_new > e) {
      ++report.monotone_violations;
      ++total_violations_;
    }
    const double rel = (e - e_new) / std::max(e, std::numeric_limits<double>::min());
    e = e_new;
    mu = std::max(mu / 3.0, 1e-8);
    if (rel < config_.relative_tolerance || e == 0.0) {
      report.converged = true;
      break;
    }
  }
  report.final_energy = e;
  return report;
}

std::vector<Vec2> Window::select_points(const Image& image, const DepthMap& depth, int target) const {
  std::vector<Vec2> out;
  if (target <= 0) return out;
  const int w = image.width();
  const int h = image.height();
  constexpr int margin = 2;
  if (w <= 2 * margin || h <= 2 * margin) return out;
  Raster mag(w, h, 0.0);
  std::vector<double> values;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const double gx = 0.5 * (image.at(x + 1, y) - image.at(x - 1, y));
      const double gy = 0.5 * (image.at(x, y + 1) - image.at(x, y - 1));
      mag.at(x, y) = std::hypot(gx, gy);
      values.push_back(mag.at(x, y));
    }
  }
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double threshold = config_.gradient_median_scale * *mid + config_.gradient_offset;

  struct Candidate {
    double strength;
    int x, y;
    bool planar;
  };
  // Per cell, the strongest locally planar pixel, else the strongest pixel.
  auto collect = [&](int cell) {
    std::vector<Candidate> found;
    for (int cy = margin; cy < h - margin; cy += cell) {
      for (int cx = margin; cx < w - margin; cx += cell) {
        Candidate planar{-1.0, 0, 0, true};
        Candidate any{-1.0, 0, 0, false};
        for (int y = cy; y < std::min(cy + cell, h - margin); ++y) {
          for (int x = cx; x < std::min(cx + cell, w - margin); ++x) {
            const double m = mag.at(x, y);
            if (!(m > threshold) || !depth.valid(x, y)) continue;
            if (m > any.strength) any = {m, x, y, false};
            if (m > planar.strength && locally_planar(depth, x, y)) planar = {m, x, y, true};
          }
        }
        if (planar.strength >= 0.0) {
          found.push_back(planar);
        } else if (any.strength >= 0.0) {
          found.push_back(any);
        }
      }
    }
    return found;
  };
  auto planar_count = [](const std::vector<Candidate>& c) {
    return static_cast<double>(std::count_if(c.begin(), c.end(), [](const Candidate& k) { return k.planar; }));
  };
  std::vector<std::vector<Candidate>> levels;
  for (int cell = config_.cell_size; cell >= 2; cell /= 2) {
    levels.push_back(collect(cell));
    if (planar_count(levels.back()) >= 0.8 * target) break;
  }
  std::size_t pick = levels.size() - 1;
  if (planar_count(levels.back()) < 0.8 * target) {
    pick = 0;
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i].size() > levels[pick].size()) pick = i;
      if (static_cast<double>(levels[i].size()) >= 0.8 * target) {
        pick = i;
        break;
      }
    }
  }
  std::vector<Candidate> best = std::move(levels[pick]);
  std::stable_partition(best.begin(), best.end(), [](const Candidate& c) { return c.planar; });
  const auto split = static_cast<std::size_t>(planar_count(best));
  // The group that overflows the target is thinned evenly in raster order.
  auto take = [&](std::size_t begin, std::size_t end, std::size_t n) {
    const std::size_t count = end - begin;
    for (std::size_t i = 0; i < std::min(n, count); ++i) {
      const Candidate& c = best[begin + (n >= count ? i : i * count / n)];
      out.emplace_back(c.x, c.y);
    }
  };
  const auto budget = static_cast<std::size_t>(target);
  take(0, split, budget);
  if (out.size() < budget) take(split, best.size(), budget - out.size());
  return out;
}

int Window::add_keyframe(const FrameBundle& bundle, const FrameState& tracked,
                         std::optional<PosePrior> prior_from_previous, int frame_index) {
  if (bundle.image.width() != intrinsics_.width || bundle.image.height() != intrinsics_.height) {
    throw InputError("window: keyframe image does not match the intrinsics");
  }
  if (bundle.depth.width() != intrinsics_.width || bundle.depth.height() != intrinsics_.height) {
    throw InputError("window: keyframe depth does not match the intrinsics");
  }
  Keyframe kf;
  kf.id = next_id_++;
  kf.frame_index = frame_index;
  kf.timestamp = bundle.timestamp;
  kf.state = tracked;
  kf.image = bundle.image;
  kf.prior_depth = bundle.depth;
  kf.uncertainty = bundle.uncertainty;
  if (config_.use_depth_prior && config_.virtual_stereo_lambda > 0.0) {
    kf.stereo_inv_depth = stereo_inverse_depth(bundle.depth, config_.stereo_baseline, intrinsics_);
  }
  if (prior_from_previous && !keyframes_.empty()) {
    kf.prior = prior_from_previous;
    kf.prior_from = keyframes_.back().id;
  }
  keyframes_.push_back(std::move(kf));
  const Keyframe& added = keyframes_.back();

  const int budget = config_.point_budget - static_cast<int>(active_point_count());
  const std::vector<Vec2> pixels = select_points(added.image, added.prior_depth, budget);
  double uniform = 1.0;
  if (!config_.use_depth_prior) {
    std::vector<double> valid;
    for (std::size_t i = 0; i < added.prior_depth.raster().size(); ++i) {
      if (added.prior_depth.valid(i)) valid.push_back(added.prior_depth.raster()[i]);
    }
    if (!valid.empty()) {
      auto mid = valid.begin() + static_cast<std::ptrdiff_t>(valid.size() / 2);
      std::nth_element(valid.begin(), mid, valid.end());
      uniform = 1.0 / *mid;
    }
  }
  const bool have_sigma = added.uncertainty.width() == intrinsics_.width;
  for (const Vec2& px : pixels) {
    const int x = static_cast<int>(px.x());
    const int y = static_cast<int>(px.y());
    ActivePoint p;
    p.host = added.id;
    p.pixel = px;
    p.inv_depth = config_.use_depth_prior ? 1.0 / added.prior_depth.at(x, y) : uniform;
    p.weight = config_.use_uncertainty && have_sigma
                   ? uncertainty_weight(added.uncertainty.at(x, y), config_.uncertainty_scale_alpha)
                   : 1.0;
    points_.push_back(p);
  }
  const int id = added.id;
  if (static_cast<int>(keyframes_.size()) > config_.window_capacity) marginalize_keyframe(keyframes_.front().id);
  return id;
}

int Window::reject_outliers() {
  const double limit = config_.outlier_threshold * config_.outlier_threshold;
  std::vector<std::vector<int>> rejected(points_.size());
  parallel_for(exec_, static_cast<std::int64_t>(points_.size()), [&](std::int64_t i) {
    const auto k = static_cast<std::size_t>(i);
    const ActivePoint& p = points_[k];
    if (p.status != PointStatus::Active) return;
    const Keyframe& host = keyframes_[static_cast<std::size_t>(index_of(p.host))];
    for (const Keyframe& t : keyframes_) {
      if (t.id == host.id || excluded(excluded_targets_, t.id) || excluded(p.rejected_targets, t.id)) continue;
      const ResidualTerm term =
          photometric_residual_term(host.image, host.state, p.pixel, p.inv_depth, t.image, t.state, intrinsics_);
      if (!term.valid) continue;
      double e = 0.0;
      for (const PatternResidual& r : term.residuals) {
        if (r.valid) e += huber(r.value, config_.huber_gamma);
      }
      if (e > limit * term.valid_count) rejected[k].push_back(t.id);
    }
  });
  int count = 0;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    for (int id : rejected[k]) points_[k].rejected_targets.push_back(id);
    count += static_cast<int>(rejected[k].size());
  }
  return count;
}

void Window::prepare_marginalization(int id) {
  if (index_of(id) < 0) throw InputError("window: unknown keyframe id " + std::to_string(id));
  if (!excluded(excluded_targets_, id)) excluded_targets_.push_back(id);
  std::vector<int> counts(points_.size(), 2);
  parallel_for(exec_, static_cast<std::int64_t>(points_.size()), [&](std::int64_t i) {
    const auto k = static_cast<std::size_t>(i);
    if (points_[k].host == id && points_[k].status == PointStatus::Active) counts[k] = observation_count(points_[k]);
  });
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (counts[k] < 2) points_[k].status = PointStatus::Outlier;
  }
}

void Window::marginalize_keyframe(int id) {
  const int m = index_of(id);
  if (m < 0) throw InputError("window: unknown keyframe id " + std::to_string(id));
  if (m + 1 == static_cast<int>(keyframes_.size())) throw InputError("window: cannot marginalize the newest keyframe");
  const std::optional<int> gauge = gauge_keyframe();
  prepare_marginalization(id);

  // Factors connected to the keyframe, linearized at the current state over
  // every keyframe in the window.
  const int n = static_cast<int>(keyframes_.size());
  std::vector<int> block_of(static_cast<std::size_t>(n));
  std::iota(block_of.begin(), block_of.end(), 0);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(8 * n, 8 * n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(8 * n);

  std::vector<std::size_t> hosted;
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (points_[k].host == id && points_[k].status == PointStatus::Active) hosted.push_back(k);
  }
  std::vector<PointBlock> blocks(hosted.size());
  parallel_for(exec_, static_cast<std::int64_t>(hosted.size()), [&](std::int64_t i) {
    const auto k = static_cast<std::size_t>(i);
    blocks[k] = linearize_point(keyframes_, excluded_targets_, points_[hosted[k]], m, config_, intrinsics_);
  });
  std::vector<ReducedPoint> reduced;
  double unused = 0.0;
  reduce_points(blocks, hosted, block_of, h, g, reduced, unused);
  for (const ReducedPoint& p : reduced) {
    if (p.hrr < 1e-20) continue;
    for (const auto& [ba, va] : p.hkr) {
      g.segment<8>(8 * ba) -= va * (p.gr / p.hrr);
      for (const auto& [bb, vb] : p.hkr) h.block<8, 8>(8 * ba, 8 * bb) -= va * vb.transpose() / p.hrr;
    }
  }

  if (config_.use_pose_prior) {
    const double w = config_.pose_weight;
    for (int k = 0; k < n; ++k) {
      const Keyframe& kf = keyframes_[static_cast<std::size_t>(k)];
      if (!kf.prior) continue;
      const int j = index_of(kf.prior_from);
      if (j < 0 || (k != m && j != m)) continue;
      const Mat6 info = kf.prior->covariance.information();
      const PoseTerm t = pose_prior_term(kf.prior->pose, info, keyframes_[static_cast<std::size_t>(j)].state.pose,
                                         kf.state.pose);
      Eigen::Matrix<double, 6, 16> jac = Eigen::Matrix<double, 6, 16>::Zero();
      jac.leftCols<6>() = t.d_prev;
      jac.block<6, 6>(0, 8) = t.d_cur;
      const Eigen::Matrix<double, 16, 16> hb = w * jac.transpose() * info * jac;
      const Eigen::Matrix<double, 16, 1> gb = w * jac.transpose() * info * t.error;
      const int idx[2] = {j, k};
      for (int a = 0; a < 2; ++a) {
        g.segment<8>(8 * idx[a]) += gb.segment<8>(8 * a);
        for (int b = 0; b < 2; ++b) h.block<8, 8>(8 * idx[a], 8 * idx[b]) += hb.block<8, 8>(8 * a, 8 * b);
      }
    }
  }

  if (marg_dim_ > 0) {
    const auto mm = static_cast<Eigen::Index>(marg_ids_.size());
    Eigen::VectorXd d(marg_dim_);
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(marg_dim_, marg_dim_);
    for (Eigen::Index i = 0; i < mm; ++i) {
      const Vec8 diff = state_difference(keyframe(marg_ids_[static_cast<std::size_t>(i)]).state,
                                         marg_lin_[static_cast<std::size_t>(i)]);
      d.segment<8>(8 * i) = diff;
      j.block<8, 8>(8 * i, 8 * i) = marg_jacobian(diff);
    }
    const Eigen::MatrixXd hj = j.transpose() * marg_h_ * j;
    const Eigen::VectorXd gj = j.transpose() * (marg_h_ * d + marg_b_);
    for (Eigen::Index a = 0; a < mm; ++a) {
      const int ia = index_of(marg_ids_[static_cast<std::size_t>(a)]);
      g.segment<8>(8 * ia) += gj.segment<8>(8 * a);
      for (Eigen::Index b = 0; b < mm; ++b) {
        const int ib = index_of(marg_ids_[static_cast<std::size_t>(b)]);
        h.block<8, 8>(8 * ia, 8 * ib) += hj.block<8, 8>(8 * a, 8 * b);
      }
    }
  }

  // Eliminate (or, for the gauge-fixed keyframe, condition on) keyframe m.
  std::vector<Eigen::Index> keep;
  for (int i = 0; i < n; ++i) {
    if (i == m) continue;
    for (int r = 0; r < 8; ++r) keep.push_back(8 * i + r);
  }
  const auto nk = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd hrr(nk, nk), hrm(nk, 8);
  Eigen::VectorXd gr(nk);
  for (Eigen::Index a = 0; a < nk; ++a) {
    gr[a] = g[keep[static_cast<std::size_t>(a)]];
    for (Eigen::Index b = 0; b < nk; ++b) hrr(a, b) = h(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
    hrm.row(a) = h.block(keep[static_cast<std::size_t>(a)], 8 * m, 1, 8);
  }
  if (!(gauge && *gauge == id)) {
    Mat8 hmm = h.block<8, 8>(8 * m, 8 * m);
    hmm.diagonal().array() += 1e-12;
    const Eigen::LDLT<Mat8> ldlt(hmm);
    if (ldlt.info() != Eigen::Success) throw NumericalError("window: marginalized block is singular");
    hrr -= hrm * ldlt.solve(hrm.transpose());
    gr -= hrm * ldlt.solve(Vec8(g.segment<8>(8 * m)));
  }
  if (gauge && *gauge != id) {
    const int gi = index_of(*gauge);
    const int gb = gi > m ? gi - 1 : gi;
    hrr.block<8, 8>(8 * gb, 8 * gb).diagonal().array() += kAnchorInformation;
  }
  hrr = 0.5 * (hrr + hrr.transpose()).eval();

  points_.erase(std::remove_if(points_.begin(), points_.end(), [&](const ActivePoint& p) { return p.host == id; }),
                points_.end());
  keyframes_.erase(keyframes_.begin() + m);
  for (Keyframe& kf : keyframes_) {
    if (kf.prior_from == id) {
      kf.prior.reset();
      kf.prior_from = -1;
    }
  }
  excluded_targets_.erase(std::remove(excluded_targets_.begin(), excluded_targets_.end(), id), excluded_targets_.end());

  marg_ids_.clear();
  marg_lin_.clear();
  for (const Keyframe& kf : keyframes_) {
    marg_ids_.push_back(kf.id);
    marg_lin_.push_back(kf.state);
  }
  marg_h_ = hrr;
  marg_b_ = gr;
  marg_dim_ = static_cast<int>(nk);
}

}  // namespace d3vo

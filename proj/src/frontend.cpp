#include "d3vo/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>

#include "d3vo/backend.hpp"
#include "d3vo/errors.hpp"
#include "d3vo/robust.hpp"

namespace d3vo {

Se3 predict_initial_pose(const Se3& last, const std::optional<Se3>& prior_relative,
                         const std::optional<Se3>& before_last) {
  if (prior_relative) return *prior_relative * last;
  if (before_last) return (last * before_last->inverse()) * last;
  return last;
}

void TrackingConfig::validate() const {
  if (levels < 1) throw InputError("tracking: levels must be positive");
  if (max_iterations < 1) throw InputError("tracking: max_iterations must be positive");
  if (max_halvings < 0) throw InputError("tracking: max_halvings must be non-negative");
  if (!(relative_tolerance > 0.0)) throw InputError("tracking: relative_tolerance must be positive");
  if (!(huber_gamma > 0.0)) throw InputError("tracking: huber_gamma must be positive");
  if (!(lost_fraction >= 0.0 && lost_fraction <= 1.0)) throw InputError("tracking: lost_fraction must lie in [0,1]");
  if (min_reference_pixels < 1) throw InputError("tracking: min_reference_pixels must be positive");
}

namespace {

constexpr double kDampingInit = 1e-4;
constexpr double kDampingCeiling = 1e8;

struct RefPixel {
  Vec2 pixel;
  Vec3 point;  ///< reference camera frame
  double intensity = 0.0;
  bool occluded = false;
};

struct LevelData {
  Intrinsics intrinsics;
  const Image* frame = nullptr;
  std::vector<RefPixel> pixels;
};

std::vector<std::uint8_t> downsample_any(std::span<const std::uint8_t> flags, int w, int h) {
  const int cw = w / 2, ch = h / 2;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(cw) * static_cast<std::size_t>(ch), 0);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      std::uint8_t v = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) v |= flags[static_cast<std::size_t>(2 * y + dy) * w + 2 * x + dx];
      out[static_cast<std::size_t>(y) * cw + x] = v;
    }
  }
  return out;
}

std::vector<LevelData> build_levels(const Pyramid& frame, const ReferenceView& ref, const Intrinsics& intrinsics,
                                    int levels) {
  std::vector<LevelData> out;
  DepthMap depth = ref.depth;
  std::vector<std::uint8_t> occluded(ref.occluded.begin(), ref.occluded.end());
  if (occluded.empty()) occluded.assign(static_cast<std::size_t>(depth.width()) * depth.height(), 0);
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      occluded = downsample_any(occluded, depth.width(), depth.height());
      depth = downsample(depth);
    }
    LevelData data;
    data.intrinsics = intrinsics.at_level(l);
    data.frame = &frame.level(l);
    const Image& img = ref.image.level(l);
    for (int y = 2; y + 2 < depth.height(); ++y) {
      for (int x = 2; x + 2 < depth.width(); ++x) {
        if (!depth.valid(x, y)) continue;
        RefPixel p;
        p.pixel = Vec2(x, y);
        p.point = backproject(p.pixel, depth.at(x, y), data.intrinsics);
        p.intensity = img.at(x, y);
        p.occluded = occluded[depth.raster().index(x, y)] != 0;
        data.pixels.push_back(p);
      }
    }
    out.push_back(std::move(data));
  }
  return out;
}

struct PixelEval {
  double r = 0.0;
  Eigen::Matrix<double, 1, 8> j = Eigen::Matrix<double, 1, 8>::Zero();
  Vec2 projected = Vec2::Zero();
  bool valid = false;
};

PixelEval evaluate_pixel(const RefPixel& p, const LevelData& level, const AlignmentInit& s, const ReferenceView& ref,
                         bool with_jacobian) {
  PixelEval e;
  if (p.occluded) return e;
  const Vec3 y = s.pose * p.point;
  if (!(y.z() > 0.0)) return e;
  const double inv_z = 1.0 / y.z();
  const Intrinsics& k = level.intrinsics;
  e.projected = Vec2(k.fx * y.x() * inv_z + k.cx, k.fy * y.y() * inv_z + k.cy);
  const SampleGrad g = gradient(*level.frame, e.projected);
  if (!g.valid) return e;
  const double gain = std::exp(s.a - ref.a);
  e.r = (g.value - s.b) - gain * (p.intensity - ref.b);
  e.valid = true;
  if (with_jacobian) {
    const Mat23 dproj = project_jacobian(y, k);
    Mat36 dy;
    dy.leftCols<3>().setIdentity();
    dy.rightCols<3>() = -skew(y);
    e.j.head<6>() = g.grad.transpose() * dproj * dy;
    e.j(6) = -gain * (p.intensity - ref.b);
    e.j(7) = -1.0;
  }
  return e;
}

struct Normal {
  Mat8 h = Mat8::Zero();
  Vec8 g = Vec8::Zero();
  double photometric = 0.0;
  double prior = 0.0;
  double total() const { return photometric + prior; }
  std::size_t valid = 0;
  double displacement = 0.0;
};

Normal accumulate(const LevelData& level, const AlignmentInit& s, const ReferenceView& ref,
                  const std::optional<PosePrior>& prior, double gamma, bool with_jacobian, Exec exec) {
  std::vector<PixelEval> evals(level.pixels.size());
  parallel_for(exec, static_cast<std::int64_t>(evals.size()), [&](std::int64_t i) {
    evals[static_cast<std::size_t>(i)] = evaluate_pixel(level.pixels[static_cast<std::size_t>(i)], level, s, ref, with_jacobian);
  });
  Normal n;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const PixelEval& e = evals[i];
    if (!e.valid) continue;
    ++n.valid;
    n.photometric += huber(e.r, gamma);
    n.displacement += (e.projected - level.pixels[i].pixel).norm();
    if (with_jacobian) {
      const double w = huber_weight(e.r, gamma);
      n.h.noalias() += w * e.j.transpose() * e.j;
      n.g.noalias() += w * e.r * e.j.transpose();
    }
  }
  if (prior) {
    const Mat6 info = prior->covariance.information();
    const PoseTerm t = pose_prior_term(prior->pose, info, Se3(), s.pose);
    n.prior = t.energy;
    if (with_jacobian) {
      n.h.topLeftCorner<6, 6>() += t.d_cur.transpose() * info * t.d_cur;
      n.g.head<6>() += t.d_cur.transpose() * info * t.error;
    }
  }
  return n;
}

AlignmentInit step_state(const AlignmentInit& s, const Vec8& d) {
  return {se3_exp(Vec6(d.head<6>())) * s.pose, s.a + d(6), s.b + d(7)};
}

// Affine block eliminated with a tiny ridge so textureless frames stay finite.
DirectFactor reduce_factor(const Se3& pose, const Mat8& h, const Vec8& g) {
  DirectFactor f;
  f.linearization = pose;
  const Eigen::Matrix2d haa = h.bottomRightCorner<2, 2>() + 1e-12 * Eigen::Matrix2d::Identity();
  const Eigen::LDLT<Eigen::Matrix2d> ldlt(haa);
  const Eigen::Matrix<double, 6, 2> hpa = h.topRightCorner<6, 2>();
  f.hessian = h.topLeftCorner<6, 6>() - hpa * ldlt.solve(hpa.transpose());
  f.gradient = g.head<6>() - hpa * ldlt.solve(Eigen::Vector2d(g.tail<2>()));
  f.hessian = 0.5 * (f.hessian + f.hessian.transpose());
  return f;
}

}  // namespace

double alignment_energy(const Pyramid& frame, const ReferenceView& reference, const Intrinsics& intrinsics,
                        const AlignmentInit& state, const std::optional<PosePrior>& prior,
                        const TrackingConfig& config) {
  const std::vector<LevelData> levels = build_levels(frame, reference, intrinsics, 1);
  return accumulate(levels[0], state, reference, prior, config.huber_gamma, false, Exec::Serial).total();
}

AlignmentResult align_direct(const Pyramid& frame, const ReferenceView& reference, const Intrinsics& intrinsics,
                             const AlignmentInit& init, const std::optional<PosePrior>& prior,
                             const TrackingConfig& config, Exec exec) {
  config.validate();
  if (reference.depth.valid_count() < static_cast<std::size_t>(config.min_reference_pixels)) {
    throw InputError("tracking: reference has fewer than " + std::to_string(config.min_reference_pixels) +
                     " pixels with depth");
  }
  const int levels = std::min({config.levels, frame.levels(), reference.image.levels()});
  if (frame.level(0).width() != reference.depth.width() || frame.level(0).height() != reference.depth.height() ||
      reference.image.level(0).width() != reference.depth.width()) {
    throw InputError("tracking: frame, reference and depth sizes differ");
  }
  const std::vector<LevelData> data = build_levels(frame, reference, intrinsics, levels);
  const double gamma = config.huber_gamma;

  AlignmentResult result;
  result.level_iterations.assign(static_cast<std::size_t>(levels), 0);
  AlignmentInit state = init;
  bool converged_finest = false;
  for (int l = levels - 1; l >= 0; --l) {
    const LevelData& level = data[static_cast<std::size_t>(l)];
    if (level.pixels.empty()) continue;
    double mu = kDampingInit;
    Normal n = accumulate(level, state, reference, prior, gamma, true, exec);
    double e = n.total();
    bool level_converged = false;
    for (int it = 0; it < config.max_iterations; ++it) {
      ++result.level_iterations[static_cast<std::size_t>(l)];
      bool accepted = false;
      double e_new = e;
      AlignmentInit candidate = state;
      while (!accepted && mu <= kDampingCeiling) {
        Mat8 h = n.h;
        for (int i = 0; i < 8; ++i) h(i, i) = n.h(i, i) * (1.0 + mu) + 1e-12;
        const Eigen::LLT<Mat8> llt(h);
        if (llt.info() != Eigen::Success) {
          mu *= 10.0;
          continue;
        }
        const Vec8 step = -llt.solve(n.g);
        double scale = 1.0;
        for (int half = 0; half <= config.max_halvings; ++half, scale *= 0.5) {
          candidate = step_state(state, scale * step);
          e_new = accumulate(level, candidate, reference, prior, gamma, false, exec).total();
          if (e_new < e) {
            accepted = true;
            break;
          }
        }
        if (!accepted) mu *= 10.0;
      }
      if (!accepted) {
        level_converged = true;
        break;
      }
      if (e_new > e) ++result.monotone_violations;
      const double rel = (e - e_new) / std::max(e, std::numeric_limits<double>::min());
      state = candidate;
      n = accumulate(level, state, reference, prior, gamma, true, exec);
      e = n.total();
      mu = std::max(mu / 3.0, 1e-8);
      if (rel < config.relative_tolerance || e == 0.0) {
        level_converged = true;
        break;
      }
    }
    if (l == 0) converged_finest = level_converged;
  }

  result.pose = state.pose;
  result.a = state.a;
  result.b = state.b;
  const Normal fin = accumulate(data[0], state, reference, prior, gamma, true, exec);
  result.energy = fin.total();
  result.converged = converged_finest && std::isfinite(result.energy);
  result.valid_fraction =
      data[0].pixels.empty() ? 0.0 : static_cast<double>(fin.valid) / static_cast<double>(data[0].pixels.size());
  result.lost = result.valid_fraction < config.lost_fraction;
  result.mean_displacement = fin.valid > 0 ? fin.displacement / static_cast<double>(fin.valid) : 0.0;
  const Normal photo = accumulate(data[0], state, reference, std::nullopt, gamma, true, exec);
  result.factor = reduce_factor(state.pose, photo.h, photo.g);
  return result;
}

DepthMap splat_reference_depth(std::span<const Vec3> reference_points, const Intrinsics& intrinsics, int radius) {
  Raster depth(intrinsics.width, intrinsics.height, 0.0);
  std::vector<std::uint8_t> valid(depth.size(), 0);
  for (const Vec3& p : reference_points) {
    if (!(p.z() > 0.0)) continue;
    const Vec2 q = project(p, intrinsics);
    const int cx = static_cast<int>(std::lround(q.x()));
    const int cy = static_cast<int>(std::lround(q.y()));
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        const int x = cx + dx, y = cy + dy;
        if (!depth.contains(x, y)) continue;
        const std::size_t i = depth.index(x, y);
        if (!valid[i] || p.z() < depth[i]) {
          depth[i] = p.z();
          valid[i] = 1;
        }
      }
    }
  }
  return {std::move(depth), std::move(valid)};
}

// ---------------------------------------------------------------------------
// Tracking graph

struct TrackingGraph::System {
  std::vector<int> frames;
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  double energy = 0.0;
};

TrackingGraph::TrackingGraph(int reference_frame, const Se3& reference_pose, int max_nodes)
    : reference_frame_(reference_frame), reference_pose_(reference_pose), max_nodes_(max_nodes) {}

int TrackingGraph::index_of(int frame) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].frame == frame) return static_cast<int>(i);
  }
  return -1;
}

const TrackingGraph::Node& TrackingGraph::node(int frame) const {
  const int i = index_of(frame);
  if (i < 0) throw InputError("tracking graph: no node for frame " + std::to_string(frame));
  return nodes_[static_cast<std::size_t>(i)];
}

void TrackingGraph::add_node(int frame, const Se3& init, std::optional<DirectFactor> direct,
                             std::optional<PosePrior> between) {
  if (frame == reference_frame_ || index_of(frame) >= 0) {
    throw InputError("tracking graph: duplicate frame " + std::to_string(frame));
  }
  Node n;
  n.frame = frame;
  n.pose = init;
  n.direct = std::move(direct);
  if (between) {
    n.between = std::move(between);
    n.between_from = nodes_.empty() ? reference_frame_ : nodes_.back().frame;
  }
  nodes_.push_back(std::move(n));
}

// Linearizes the factors touching `frames` plus the previous prior (all
// factors when empty) at the current states. Blocks start with `frames`.
TrackingGraph::System TrackingGraph::linearize(std::span<const int> frames) const {
  System s;
  if (frames.empty()) {
    for (const Node& n : nodes_) s.frames.push_back(n.frame);
  } else {
    s.frames.assign(frames.begin(), frames.end());
  }
  auto block = [&](int frame) {
    const auto it = std::find(s.frames.begin(), s.frames.end(), frame);
    return it == s.frames.end() ? -1 : static_cast<int>(it - s.frames.begin());
  };
  const bool all = frames.empty();
  auto marg = [&](int frame) { return all || std::find(frames.begin(), frames.end(), frame) != frames.end(); };
  auto pose_of = [&](int frame) -> const Se3& {
    return frame == reference_frame_ ? reference_pose_ : nodes_[static_cast<std::size_t>(index_of(frame))].pose;
  };

  // Neighbours sharing a factor with the marginalized nodes, and every node of
  // the previous prior, get blocks after the marginalized ones.
  auto ensure = [&](int frame) {
    if (frame == reference_frame_ || block(frame) >= 0) return;
    s.frames.push_back(frame);
  };
  if (!all) {
    for (const Node& n : nodes_) {
      if (n.between && (marg(n.frame) || marg(n.between_from))) {
        ensure(n.frame);
        ensure(n.between_from);
      }
    }
    for (int f : prior_frames_) ensure(f);
  }

  const Eigen::Index dim = 6 * static_cast<Eigen::Index>(s.frames.size());
  s.h = Eigen::MatrixXd::Zero(dim, dim);
  s.g = Eigen::VectorXd::Zero(dim);

  for (const Node& n : nodes_) {
    const int bi = block(n.frame);
    if (n.direct && marg(n.frame)) {
      const DirectFactor& f = *n.direct;
      const Vec6 d = se3_log_vec(n.pose * reference_pose_.inverse() * f.linearization.inverse());
      const Mat6 j = se3_left_jacobian_inverse(d);
      s.h.block<6, 6>(6 * bi, 6 * bi) += j.transpose() * f.hessian * j;
      s.g.segment<6>(6 * bi) += j.transpose() * (f.hessian * d + f.gradient);
      s.energy += d.dot(f.hessian * d) + 2.0 * f.gradient.dot(d);
    }
    if (n.between) {
      if (!marg(n.frame) && !marg(n.between_from)) continue;
      const int bp = n.between_from == reference_frame_ ? -1 : block(n.between_from);
      const Mat6 info = n.between->covariance.information();
      const PoseTerm t = pose_prior_term(n.between->pose, info, pose_of(n.between_from), n.pose);
      s.energy += t.energy;
      if (bi >= 0) {
        s.h.block<6, 6>(6 * bi, 6 * bi) += t.d_cur.transpose() * info * t.d_cur;
        s.g.segment<6>(6 * bi) += t.d_cur.transpose() * info * t.error;
      }
      if (bp >= 0) {
        s.h.block<6, 6>(6 * bp, 6 * bp) += t.d_prev.transpose() * info * t.d_prev;
        s.g.segment<6>(6 * bp) += t.d_prev.transpose() * info * t.error;
      }
      if (bi >= 0 && bp >= 0) {
        const Mat6 cross = t.d_cur.transpose() * info * t.d_prev;
        s.h.block<6, 6>(6 * bi, 6 * bp) += cross;
        s.h.block<6, 6>(6 * bp, 6 * bi) += cross.transpose();
      }
    }
  }

  if (!prior_frames_.empty()) {
    const std::size_t m = prior_frames_.size();
    Eigen::VectorXd d(6 * static_cast<Eigen::Index>(m));
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(d.size(), d.size());
    std::vector<int> blocks(m);
    bool any = false;
    for (std::size_t i = 0; i < m; ++i) {
      const Vec6 di = se3_log_vec(pose_of(prior_frames_[i]) * prior_lin_[i].inverse());
      d.segment<6>(6 * static_cast<Eigen::Index>(i)) = di;
      j.block<6, 6>(6 * static_cast<Eigen::Index>(i), 6 * static_cast<Eigen::Index>(i)) = se3_left_jacobian_inverse(di);
      blocks[i] = block(prior_frames_[i]);
      any = any || blocks[i] >= 0;
    }
    s.energy += d.dot(prior_h_ * d) + 2.0 * prior_b_.dot(d);
    if (any) {
      const Eigen::MatrixXd hh = j.transpose() * prior_h_ * j;
      const Eigen::VectorXd gg = j.transpose() * (prior_h_ * d + prior_b_);
      for (std::size_t a = 0; a < m; ++a) {
        if (blocks[a] < 0) continue;
        s.g.segment<6>(6 * blocks[a]) += gg.segment<6>(6 * static_cast<Eigen::Index>(a));
        for (std::size_t b = 0; b < m; ++b) {
          if (blocks[b] < 0) continue;
          s.h.block<6, 6>(6 * blocks[a], 6 * blocks[b]) +=
              hh.block<6, 6>(6 * static_cast<Eigen::Index>(a), 6 * static_cast<Eigen::Index>(b));
        }
      }
    }
  }
  return s;
}

double TrackingGraph::energy() const { return linearize({}).energy; }

GraphReport TrackingGraph::optimize(int max_iterations, double relative_tolerance) {
  GraphReport report;
  System s = linearize({});
  report.initial_energy = s.energy;
  report.final_energy = s.energy;
  if (nodes_.empty()) return report;
  double mu = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    ++report.iterations;
    const std::vector<Node> saved = nodes_;
    bool accepted = false;
    double e_new = s.energy;
    while (!accepted && mu <= kDampingCeiling) {
      Eigen::MatrixXd h = s.h;
      for (Eigen::Index i = 0; i < h.rows(); ++i) h(i, i) = s.h(i, i) * (1.0 + mu) + 1e-12;
      const Eigen::LLT<Eigen::MatrixXd> llt(h);
      if (llt.info() != Eigen::Success) {
        mu = std::max(mu * 10.0, kDampingInit);
        continue;
      }
      const Eigen::VectorXd step = -llt.solve(s.g);
      double scale = 1.0;
      for (int half = 0; half <= 8; ++half, scale *= 0.5) {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
          nodes_[i].pose = se3_exp(Vec6(scale * step.segment<6>(6 * static_cast<Eigen::Index>(i)))) * saved[i].pose;
        }
        e_new = energy();
        if (e_new < s.energy) {
          accepted = true;
          break;
        }
        nodes_ = saved;
      }
      if (!accepted) mu = std::max(mu * 10.0, kDampingInit);
    }
    if (!accepted) {
      Eigen::MatrixXd h = s.h;
      for (Eigen::Index i = 0; i < h.rows(); ++i) h(i, i) = s.h(i, i) * (1.0 + kDampingCeiling) + 1e-12;
      if (Eigen::LLT<Eigen::MatrixXd>(h).info() != Eigen::Success) {
        throw NumericalError("tracking graph: system indefinite, covariances inconsistent");
      }
      break;
    }
    ++report.accepted_steps;
    if (e_new > s.energy) ++report.monotone_violations;
    const double rel = (s.energy - e_new) / std::max(s.energy, std::numeric_limits<double>::min());
    s = linearize({});
    mu /= 3.0;
    if (rel < relative_tolerance || s.energy == 0.0) break;
  }
  report.final_energy = s.energy;
  return report;
}

Se3 TrackingGraph::update(int frame, const Se3& init, std::optional<DirectFactor> direct,
                          std::optional<PosePrior> between) {
  add_node(frame, init, std::move(direct), std::move(between));
  optimize();
  while (max_nodes_ >= 0 && static_cast<int>(nodes_.size()) > max_nodes_) marginalize_oldest();
  return node(frame).pose;
}

void TrackingGraph::marginalize_oldest() {
  if (nodes_.empty()) throw InputError("tracking graph: nothing to marginalize");
  const int f = nodes_.front().frame;
  marginalize(std::span<const int>(&f, 1));
}

void TrackingGraph::marginalize(std::span<const int> frames) {
  for (int f : frames) {
    if (index_of(f) < 0) throw InputError("tracking graph: no node for frame " + std::to_string(f));
  }
  const System s = linearize(frames);
  const Eigen::Index k = 6 * static_cast<Eigen::Index>(frames.size());
  const Eigen::Index r = s.h.rows() - k;
  const Eigen::MatrixXd hmm = s.h.topLeftCorner(k, k);
  const Eigen::LLT<Eigen::MatrixXd> llt(hmm);
  if (llt.info() != Eigen::Success || hmm.diagonal().minCoeff() <= 0.0) {
    throw NumericalError("tracking graph: marginalized block is singular (unconstrained node)");
  }
  const Eigen::MatrixXd hrm = s.h.bottomLeftCorner(r, k);
  Eigen::MatrixXd h = s.h.bottomRightCorner(r, r) - hrm * llt.solve(hrm.transpose());
  const Eigen::VectorXd b = s.g.tail(r) - hrm * llt.solve(s.g.head(k));
  h = 0.5 * (h + h.transpose());

  std::vector<int> remaining(s.frames.begin() + static_cast<std::ptrdiff_t>(frames.size()), s.frames.end());
  std::vector<Se3> lin;
  for (int f : remaining) lin.push_back(nodes_[static_cast<std::size_t>(index_of(f))].pose);

  // The prior factor set is replaced: every factor touching the marginalized
  // nodes has been folded into it.
  for (Node& n : nodes_) {
    const bool gone = std::find(frames.begin(), frames.end(), n.frame) != frames.end();
    const bool from_gone = std::find(frames.begin(), frames.end(), n.between_from) != frames.end();
    if (!gone && from_gone) {
      n.between.reset();
      n.between_from = -1;
    }
  }
  std::erase_if(nodes_, [&](const Node& n) { return std::find(frames.begin(), frames.end(), n.frame) != frames.end(); });

  prior_frames_ = std::move(remaining);
  prior_lin_ = std::move(lin);
  prior_h_ = std::move(h);
  prior_b_ = b;
}

Mat6 TrackingGraph::marginal_covariance(int frame) const {
  const int i = index_of(frame);
  if (i < 0) throw InputError("tracking graph: no node for frame " + std::to_string(frame));
  const System s = linearize({});
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(s.h);
  if (ldlt.info() != Eigen::Success) throw NumericalError("tracking graph: information matrix singular");
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(s.h.rows(), 6);
  e.block<6, 6>(6 * i, 0).setIdentity();
  const Eigen::MatrixXd x = ldlt.solve(e);
  const Mat6 cov = x.block<6, 6>(6 * i, 0);
  return 0.5 * (cov + cov.transpose());
}

}  // namespace d3vo

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "d3vo/errors.hpp"
#include "d3vo/selfsup.hpp"

namespace d3vo {

namespace {

enum class Coord { Depth, Sigma, Pose, Brightness };

struct Probe {
  Coord kind;
  std::size_t scale = 0;
  std::size_t index = 0;  // pixel, or source
  int component = 0;
};

double step_for(double x) { return 1e-5 * std::max(std::abs(x), 1.0); }

// Returns a copy of `problem` with the probed coordinate moved by `delta`.
LossProblem perturbed(const LossProblem& problem, const Probe& p, double delta) {
  LossProblem q = problem;
  switch (p.kind) {
    case Coord::Depth: {
      ScaleInput& in = q.scales[p.scale];
      const int x = static_cast<int>(p.index % static_cast<std::size_t>(in.depth.width()));
      const int y = static_cast<int>(p.index / static_cast<std::size_t>(in.depth.width()));
      in.depth.set(x, y, in.depth.at(x, y) + delta);
      break;
    }
    case Coord::Sigma: {
      ScaleInput& in = q.scales[p.scale];
      const int x = static_cast<int>(p.index % static_cast<std::size_t>(in.target.width()));
      const int y = static_cast<int>(p.index / static_cast<std::size_t>(in.target.width()));
      in.uncertainty->set(x, y, in.uncertainty->at(x, y) + delta);
      break;
    }
    case Coord::Pose: {
      Vec6 xi = Vec6::Zero();
      xi[p.component] = delta;
      q.poses[p.index] = se3_exp(xi) * q.poses[p.index];
      break;
    }
    case Coord::Brightness:
      (p.component == 0 ? q.brightness[p.index].a : q.brightness[p.index].b) += delta;
      break;
  }
  return q;
}

double current_value(const LossProblem& problem, const Probe& p) {
  switch (p.kind) {
    case Coord::Depth:
      return problem.scales[p.scale].depth.raster()[p.index];
    case Coord::Sigma:
      return problem.scales[p.scale].uncertainty->raster()[p.index];
    case Coord::Pose:
      return 0.0;
    case Coord::Brightness:
      return p.component == 0 ? problem.brightness[p.index].a : problem.brightness[p.index].b;
  }
  return 0.0;
}

double analytic_value(const LossGradients& g, const Probe& p) {
  switch (p.kind) {
    case Coord::Depth:
      return g.depth[p.scale][p.index];
    case Coord::Sigma:
      return g.sigma[p.scale][p.index];
    case Coord::Pose:
      return g.pose[p.index][p.component];
    case Coord::Brightness:
      return g.brightness[p.index][p.component];
  }
  return 0.0;
}

std::string describe(const Probe& p) {
  std::ostringstream os;
  switch (p.kind) {
    case Coord::Depth: os << "depth[s" << p.scale << "][" << p.index << "]"; break;
    case Coord::Sigma: os << "sigma[s" << p.scale << "][" << p.index << "]"; break;
    case Coord::Pose: os << "pose[" << p.index << "][" << p.component << "]"; break;
    case Coord::Brightness: os << (p.component == 0 ? "a[" : "b[") << p.index << "]"; break;
  }
  return os.str();
}

}  // namespace

GradientCheckReport check_loss_gradients(const LossProblem& problem, int coordinates,
                                         std::uint64_t seed, double rel_tol, double abs_tol) {
  if (coordinates < 1) throw InputError("gradient check: need at least one coordinate");
  const LossGradients grads = loss_gradients(problem);
  const auto base_sig = loss_branch_signature(problem);

  std::vector<Coord> kinds{Coord::Depth, Coord::Pose, Coord::Brightness};
  bool any_sigma = false;
  for (const auto& s : problem.scales) any_sigma = any_sigma || s.uncertainty.has_value();
  if (any_sigma) kinds.push_back(Coord::Sigma);

  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };

  GradientCheckReport report;
  const int max_attempts = 50 * coordinates;
  for (int attempt = 0; attempt < max_attempts && report.checked < coordinates; ++attempt) {
    Probe p{kinds[pick(kinds.size())]};
    if (p.kind == Coord::Depth || p.kind == Coord::Sigma) {
      p.scale = pick(problem.scales.size());
      const ScaleInput& in = problem.scales[p.scale];
      if (p.kind == Coord::Sigma && !in.uncertainty) continue;
      p.index = pick(in.target.raster().size());
      if (p.kind == Coord::Depth && !in.depth.valid(p.index)) continue;
    } else {
      p.index = pick(problem.poses.size());
      p.component = static_cast<int>(pick(p.kind == Coord::Pose ? 6 : 2));
    }

    const double h = step_for(current_value(problem, p));
    const LossProblem plus = perturbed(problem, p, h);
    const LossProblem minus = perturbed(problem, p, -h);
    if (loss_branch_signature(plus) != base_sig || loss_branch_signature(minus) != base_sig) {
      ++report.skipped;
      continue;
    }
    const double numeric = (total_loss(plus) - total_loss(minus)) / (2.0 * h);
    const double analytic = analytic_value(grads, p);
    const double tol = std::max(rel_tol * std::max(std::abs(analytic), std::abs(numeric)), abs_tol);
    const double ratio = std::abs(analytic - numeric) / tol;
    report.worst_ratio = std::max(report.worst_ratio, ratio);
    ++report.checked;
    if (ratio > 1.0) {
      ++report.failed;
      std::ostringstream os;
      os << describe(p) << ": analytic " << analytic << " numeric " << numeric;
      report.failures.push_back(os.str());
    }
  }
  return report;
}

}  // namespace d3vo

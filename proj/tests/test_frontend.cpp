#include <Eigen/Eigenvalues>

#include "d3vo/errors.hpp"
#include "d3vo/frontend.hpp"
#include "d3vo/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace d3vo;

namespace {

constexpr int kW = 320;
constexpr int kH = 240;

Intrinsics camera() { return test::small_intrinsics(kW, kH, 265.0); }

struct Pair {
  Rendering ref;
  Rendering cur;
  Pyramid ref_pyr;
  Pyramid cur_pyr;
};

Scene slanted_plane() {
  Scene s;
  TexturedPlane p;
  p.normal = Vec3(0.2, -0.1, 1.0).normalized();
  p.offset = 2.5;
  p.texture_seed = 5;
  p.cell_size = 0.5;
  s.planes.push_back(p);
  return s;
}

Pair rendered_pair(const Se3& motion, std::uint32_t seed = 4, bool plane = false) {
  const Scene s = plane ? slanted_plane() : make_room_scene(seed);
  Pair p;
  p.ref = render(s, Se3(), camera());
  p.cur = render(s, motion, camera());
  p.ref_pyr = Pyramid(p.ref.image, 4);
  p.cur_pyr = Pyramid(p.cur.image, 4);
  return p;
}

Se3 twist(double tx, double ty, double tz, double rx, double ry, double rz) {
  return se3_exp((Vec6() << tx, ty, tz, rx, ry, rz).finished());
}

double rot_err(const Se3& a, const Se3& b) { return se3_log_vec(a * b.inverse()).tail<3>().norm(); }
double trans_err(const Se3& a, const Se3& b) { return (a.translation() - b.translation()).norm(); }

PosePrior prior_of(const Se3& pose, double variance) { return {pose, PoseCovariance::uniform(variance)}; }

DirectFactor factor_at(const Se3& lin, double info, const Vec6& gradient = Vec6::Zero()) {
  DirectFactor f;
  f.linearization = lin;
  f.hessian = info * Mat6::Identity();
  f.gradient = gradient;
  return f;
}

}  // namespace

TEST_CASE("predict_initial_pose") {
  std::mt19937 rng(1);
  const Se3 last = test::random_pose(rng);
  const Se3 before = test::random_pose(rng);
  CHECK(test::pose_diff(predict_initial_pose(last, Se3()), last) < 1e-15);
  const Se3 cv = predict_initial_pose(last, std::nullopt, before);
  CHECK(test::pose_diff(cv * last.inverse(), last * before.inverse()) < 1e-12);
  const Vec6 xi = test::random_twist(rng, 0.1, 0.2);
  CHECK(test::pose_diff(predict_initial_pose(last, se3_exp(xi), before), se3_exp(xi) * last) < 1e-15);
  CHECK(test::pose_diff(predict_initial_pose(last, std::nullopt), last) == 0.0);
}

TEST_CASE("aligning a frame with itself stays at the identity") {
  const Pair p = rendered_pair(Se3());
  const AlignmentResult r = align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {}, std::nullopt);
  CHECK(r.converged);
  CHECK(se3_log_vec(r.pose).norm() < 1e-12);
  CHECK(r.energy < 1e-20);
  CHECK(r.valid_fraction == 1.0);
  CHECK_FALSE(r.lost);
  CHECK(r.mean_displacement < 1e-12);
}

TEST_CASE("direct alignment recovers a rendered motion") {
  const Se3 motion = twist(-0.08, 0.02, 0.05, 0.01, -0.02, 0.005);
  const Pair p = rendered_pair(motion, 0, true);
  const Se3 init = se3_exp(Vec6(0.5 * se3_log_vec(motion)));
  const AlignmentResult r = align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {init, 0, 0}, std::nullopt);
  CHECK(r.converged);
  CHECK(trans_err(r.pose, motion) < 1e-3);
  CHECK(rot_err(r.pose, motion) < 1e-3);
  CHECK(r.monotone_violations == 0);
  CHECK(r.valid_fraction > 0.7);
  CHECK(r.level_iterations.size() == 4);
}

TEST_CASE("direct alignment estimates the affine brightness change") {
  const Se3 motion = twist(0.03, 0.0, 0.02, 0.0, 0.01, 0.0);
  const Scene s = slanted_plane();
  const Rendering ref = render(s, Se3(), camera());
  const Rendering cur = render(s, motion, camera(), BrightnessParams{0.9, 0.03});
  const Pyramid rp(ref.image, 4), cp(cur.image, 4);
  const AlignmentResult r = align_direct(cp, {rp, ref.depth}, camera(), {Se3(), 0, 0}, std::nullopt);
  CHECK(trans_err(r.pose, motion) < 1e-3);
  CHECK(std::abs(r.a - std::log(0.9)) < 2e-3);
  CHECK(std::abs(r.b - 0.03) < 2e-3);
}

TEST_CASE("textureless frames return the prior pose") {
  const Image flat(kW, kH, 0.4);
  const Pyramid pyr(flat, 4);
  const DepthMap depth(Raster(kW, kH, 2.0));
  const Se3 p = twist(0.02, -0.01, 0.03, 0.004, 0.0, -0.002);
  const AlignmentResult r =
      align_direct(pyr, {pyr, depth}, camera(), {}, prior_of(p, 1e-6));
  CHECK(test::pose_diff(r.pose, p) < 1e-8);
}

TEST_CASE("alignment energy never increases and matches the prior-weighted objective") {
  const Se3 motion = twist(0.05, -0.02, 0.04, -0.01, 0.015, 0.0);
  const Pair p = rendered_pair(motion, 9);
  const PosePrior prior = prior_of(motion * twist(0.004, 0, 0, 0, 0.002, 0), 1e-4);
  const ReferenceView ref{p.ref_pyr, p.ref.depth};
  const AlignmentResult r = align_direct(p.cur_pyr, ref, camera(), {}, prior);
  CHECK(r.monotone_violations == 0);
  CHECK(std::abs(alignment_energy(p.cur_pyr, ref, camera(), {r.pose, r.a, r.b}, prior) - r.energy) <= 1e-12 * r.energy);
  CHECK(r.energy <= alignment_energy(p.cur_pyr, ref, camera(), {motion, 0, 0}, prior) + 1e-12);
  CHECK(r.energy < alignment_energy(p.cur_pyr, ref, camera(), {}, prior));
}

TEST_CASE("valid fraction never grows as more reference pixels are occluded") {
  const Se3 motion = twist(-0.05, 0.0, 0.03, 0.0, 0.01, 0.0);
  const Pair p = rendered_pair(motion);
  std::vector<std::uint8_t> occluded(static_cast<std::size_t>(kW) * kH, 0);
  double last = 2.0;
  for (int band = 0; band <= 5; ++band) {
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < band * kW / 5; ++x) occluded[static_cast<std::size_t>(y) * kW + x] = 1;
    const AlignmentResult r =
        align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth, 0, 0, occluded}, camera(), {motion, 0, 0}, std::nullopt);
    CHECK(r.valid_fraction <= last);
    last = r.valid_fraction;
    if (band == 5) {
      CHECK(r.valid_fraction == 0.0);
      CHECK(r.lost);
    }
  }
}

TEST_CASE("tracking is lost when the reference leaves the view") {
  const Pair p = rendered_pair(Se3());
  const AlignmentResult r =
      align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {twist(0, 0, 0, 0, 1.5, 0), 0, 0}, std::nullopt);
  CHECK(r.lost);
  CHECK(r.valid_fraction < 0.1);
}

TEST_CASE("alignment input checks") {
  const Pair p = rendered_pair(Se3());
  Raster sparse(kW, kH, 0.0);
  for (int i = 0; i < 150; ++i) sparse[static_cast<std::size_t>(i) * 97] = 2.0;
  const DepthMap few{sparse};
  CHECK_THROWS_AS(align_direct(p.cur_pyr, {p.ref_pyr, few}, camera(), {}, std::nullopt), InputError);
  TrackingConfig bad;
  bad.levels = 0;
  CHECK_THROWS_AS(align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {}, std::nullopt, bad), InputError);
}

TEST_CASE("serial and parallel alignment agree bit for bit") {
  const Se3 motion = twist(0.04, 0.01, -0.03, 0.01, 0.0, 0.01);
  const Pair p = rendered_pair(motion);
  const AlignmentResult s =
      align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {}, std::nullopt, {}, Exec::Serial);
  const AlignmentResult q =
      align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {}, std::nullopt, {}, Exec::Parallel);
  CHECK(s.pose.matrix() == q.pose.matrix());
  CHECK(s.energy == q.energy);
  CHECK(s.factor.hessian == q.factor.hessian);
}

TEST_CASE("direct factor models the photometric energy around the optimum") {
  const Se3 motion = twist(0.03, -0.02, 0.02, 0.0, 0.01, -0.005);
  const Pair p = rendered_pair(motion);
  const AlignmentResult r = align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {}, std::nullopt);
  const Eigen::SelfAdjointEigenSolver<Mat6> eig(r.factor.hessian);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
  CHECK(test::pose_diff(r.factor.linearization, r.pose) == 0.0);
  // Stationary in the pose: the Newton step of the model is negligible.
  CHECK(r.factor.hessian.ldlt().solve(r.factor.gradient).norm() < 1e-5);
}

TEST_CASE("splat_reference_depth keeps the nearest surface") {
  const Intrinsics k = test::small_intrinsics(20, 10, 10.0);
  const std::vector<Vec3> pts{Vec3(0, 0, 2.0), Vec3(0, 0, 1.0), Vec3(0, 0, -1.0)};
  const DepthMap d = splat_reference_depth(pts, k);
  CHECK(d.valid_count() == 9);
  const int cx = static_cast<int>(std::lround(k.cx)), cy = static_cast<int>(std::lround(k.cy));
  CHECK(d.at(cx, cy) == 1.0);
  CHECK(d.valid(cx + 1, cy + 1));
  CHECK_FALSE(d.valid(cx + 2, cy));
}

// ---------------------------------------------------------------------------

TEST_CASE("a single node with only a direct factor lands on the factor's minimum") {
  std::mt19937 rng(2);
  const Se3 ref = test::random_pose(rng, 0.5, 0.3);
  const Se3 lin = test::random_pose(rng, 0.1, 0.05);
  TrackingGraph g(0, ref);
  const Se3 pose = g.update(1, Se3(), factor_at(lin, 50.0), std::nullopt);
  CHECK(test::pose_diff(pose, lin * ref) < 1e-9);

  // The same with a real alignment, whose photometric gradient vanishes at convergence.
  const Se3 motion = twist(0.03, -0.02, 0.02, 0.0, 0.01, -0.005);
  const Pair p = rendered_pair(motion);
  const AlignmentResult r = align_direct(p.cur_pyr, {p.ref_pyr, p.ref.depth}, camera(), {}, std::nullopt);
  TrackingGraph h(0, Se3());
  const Se3 tracked = h.update(1, r.pose, r.factor, std::nullopt);
  CHECK(se3_log_vec(tracked * r.pose.inverse()).norm() < 1e-6);
}

TEST_CASE("consistent factors are satisfied exactly at the optimum") {
  std::mt19937 rng(3);
  const Se3 ref = test::random_pose(rng, 0.5, 0.3);
  const Se3 t1 = test::random_pose(rng, 0.1, 0.05) * ref;
  const Se3 t2 = test::random_pose(rng, 0.1, 0.05) * t1;
  TrackingGraph g(0, ref, -1);
  g.add_node(1, ref, factor_at(t1 * ref.inverse(), 20.0), prior_of(t1 * ref.inverse(), 1e-4));
  g.add_node(2, ref, factor_at(t2 * ref.inverse(), 20.0), prior_of(t2 * t1.inverse(), 1e-4));
  g.optimize();
  CHECK(g.energy() < 1e-18);
  CHECK(test::pose_diff(g.node(1).pose, t1) < 1e-9);
  CHECK(test::pose_diff(g.node(2).pose, t2) < 1e-9);
}

TEST_CASE("with only pose priors the graph reproduces the prior chain and its covariance") {
  std::mt19937 rng(4);
  const Se3 ref = test::random_pose(rng, 0.5, 0.3);
  TrackingGraph g(0, ref);
  std::vector<PosePrior> priors;
  for (int k = 1; k <= 6; ++k) {
    Vec6 var;
    for (int c = 0; c < 6; ++c) var[c] = 1e-4 * (1.0 + 0.3 * c + 0.1 * k);
    const PosePrior p{test::random_pose(rng, 0.05, 0.03), PoseCovariance(var)};
    priors.push_back(p);
    const Se3 init = g.nodes().empty() ? ref : g.nodes().back().pose;
    g.update(k, init, std::nullopt, p);
    CHECK(g.nodes().size() <= 2);
    const ChainedPrior chain = chain_pose_priors_full(priors);
    CHECK(test::pose_diff(g.node(k).pose, chain.pose * ref) < 1e-9);
    CHECK(test::max_abs_diff(g.marginal_covariance(k), chain.covariance) < 1e-9);
  }
}

TEST_CASE("marginalized solutions match the batch solution for surviving nodes") {
  std::mt19937 rng(5);
  std::normal_distribution<double> n(0.0, 1e-3);
  TrackingGraph marg(0, Se3());
  TrackingGraph batch(0, Se3(), -1);
  Se3 truth;
  for (int k = 1; k <= 6; ++k) {
    const Se3 step = test::random_pose(rng, 0.05, 0.03);
    truth = step * truth;
    Vec6 e1, e2;
    for (int c = 0; c < 6; ++c) {
      e1[c] = n(rng);
      e2[c] = n(rng);
    }
    const DirectFactor f = factor_at(se3_exp(e1) * truth, 30.0 + k);
    const PosePrior p = prior_of(se3_exp(e2) * step, 2e-4);
    const Se3 init = marg.nodes().empty() ? Se3() : marg.nodes().back().pose;
    marg.update(k, init, f, p);
    batch.update(k, init, f, p);
    for (const TrackingGraph::Node& node : marg.nodes()) {
      CHECK(se3_log_vec(node.pose * batch.node(node.frame).pose.inverse()).norm() < 1e-6);
    }
  }
  CHECK(marg.nodes().size() == 2);
  CHECK(batch.nodes().size() == 6);
}

TEST_CASE("marginalizing through an identity prior gives the composed covariance") {
  const PosePrior p1{Se3(), PoseCovariance((Vec6() << 1e-4, 2e-4, 3e-4, 1e-5, 2e-5, 3e-5).finished())};
  const PosePrior p2{twist(0.1, 0.02, -0.03, 0.05, 0.01, 0.2), PoseCovariance::uniform(5e-5)};
  TrackingGraph g(0, Se3(), -1);
  g.add_node(1, Se3(), std::nullopt, p1);
  g.add_node(2, Se3(), std::nullopt, p2);
  g.optimize();
  g.marginalize_oldest();
  REQUIRE(g.prior_frames() == std::vector<int>{2});
  const std::vector<PosePrior> chain{p1, p2};
  const Eigen::MatrixXd cov = g.prior_hessian().inverse();
  CHECK(test::max_abs_diff(cov, chain_pose_priors_full(chain).covariance) < 1e-9);
  CHECK(g.prior_gradient().norm() < 1e-9);
}

TEST_CASE("marginalizing a node without cross terms leaves the other prior blocks unchanged") {
  std::mt19937 rng(6);
  TrackingGraph g(0, Se3(), -1);
  const Se3 a = test::random_pose(rng, 0.1, 0.05), b = test::random_pose(rng, 0.1, 0.05);
  g.add_node(1, a, factor_at(a, 10.0, Vec6::Constant(0.3)), std::nullopt);
  g.add_node(2, b, factor_at(b, 12.0, Vec6::Constant(-0.2)), std::nullopt);
  g.add_node(3, b, factor_at(b, 8.0), prior_of(twist(0.01, 0, 0, 0, 0, 0), 1e-3));
  const int two = 2;
  g.marginalize(std::span<const int>(&two, 1));
  const Eigen::MatrixXd h = g.prior_hessian();
  const Eigen::VectorXd bb = g.prior_gradient();
  REQUIRE(g.prior_frames() == std::vector<int>{3});
  g.marginalize_oldest();
  REQUIRE(g.prior_frames() == std::vector<int>{3});
  CHECK(test::max_abs_diff(g.prior_hessian(), h) < 1e-12);
  CHECK(test::max_abs_diff(g.prior_gradient(), bb) < 1e-12);
}

TEST_CASE("successive marginalizations commute with a joint one") {
  std::mt19937 rng(7);
  TrackingGraph g(0, Se3(), -1);
  Se3 t;
  for (int k = 1; k <= 4; ++k) {
    const Se3 step = test::random_pose(rng, 0.05, 0.03);
    t = step * t;
    g.add_node(k, test::random_pose(rng, 0.01, 0.01) * t, factor_at(test::random_pose(rng, 0.01, 0.01) * t, 25.0),
               prior_of(step, 1e-4));
  }
  TrackingGraph seq = g, joint = g;
  const int one = 1, two = 2;
  seq.marginalize(std::span<const int>(&one, 1));
  seq.marginalize(std::span<const int>(&two, 1));
  const std::vector<int> both{1, 2};
  joint.marginalize(both);
  REQUIRE(seq.prior_frames() == joint.prior_frames());
  CHECK(test::max_abs_diff(seq.prior_hessian(), joint.prior_hessian()) < 1e-9 * joint.prior_hessian().norm());
  CHECK(test::max_abs_diff(seq.prior_gradient(), joint.prior_gradient()) < 1e-9 * (1.0 + joint.prior_gradient().norm()));
}

TEST_CASE("graph errors") {
  TrackingGraph g(0, Se3(), -1);
  g.add_node(1, Se3(), std::nullopt, std::nullopt);
  CHECK_THROWS_AS(g.marginalize_oldest(), NumericalError);
  CHECK_THROWS_AS(g.add_node(1, Se3(), std::nullopt, std::nullopt), InputError);
  CHECK_THROWS_AS(g.node(7), InputError);
}

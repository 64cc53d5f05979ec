#include "d3vo/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "d3vo/errors.hpp"

namespace d3vo {

namespace {

// Series branch for the Jacobian coefficients; the closed forms lose digits
// to cancellation well before the exp/log small-angle threshold.
constexpr double kSeriesAngle = 1e-3;

struct So3Coeffs {
  double a;  // sin(t)/t
  double b;  // (1 - cos t)/t^2
  double c;  // (t - sin t)/t^3
};

So3Coeffs so3_coeffs(double theta) {
  const double t2 = theta * theta;
  if (theta < kSeriesAngle) {
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  }
  const double half_sin = std::sin(0.5 * theta);
  return {std::sin(theta) / theta, 2.0 * half_sin * half_sin / t2,
          (theta - std::sin(theta)) / (t2 * theta)};
}

// (1/t^2) * (1 - t sin t / (2 (1 - cos t))), the W^2 coefficient of J_l^{-1}.
double so3_inverse_coeff(double theta) {
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  }
  const double half = 0.5 * theta;
  return 1.0 / (theta * theta) - std::cos(half) / (std::sin(half) * 2.0 * theta);
}

Eigen::Matrix<double, 3, Eigen::Dynamic> stack(std::span<const Vec3> pts) {
  Eigen::Matrix<double, 3, Eigen::Dynamic> m(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts[i];
  return m;
}

bool has_planar_spread(const Eigen::Matrix<double, 3, Eigen::Dynamic>& pts) {
  const Vec3 mean = pts.rowwise().mean();
  const Mat3 scatter = (pts.colwise() - mean) * (pts.colwise() - mean).transpose();
  Eigen::JacobiSVD<Mat3> svd(scatter);
  const auto sv = svd.singularValues();
  return sv(0) > 0.0 && sv(1) > 1e-12 * sv(0);
}

}  // namespace

Eigen::Matrix4d Se3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Mat6 Se3::adjoint() const {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = rotation_;
  ad.topRightCorner<3, 3>() = skew(translation_) * rotation_;
  ad.bottomRightCorner<3, 3>() = rotation_;
  return ad;
}

bool Se3::is_valid(double tol) const {
  if (!rotation_.allFinite() || !translation_.allFinite()) return false;
  const Mat3 err = rotation_ * rotation_.transpose() - Mat3::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && std::abs(rotation_.determinant() - 1.0) <= tol;
}

Se3 Se3::normalized() const {
  Eigen::JacobiSVD<Mat3> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return {r, translation_};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  if (theta < kSmallAngle) return Mat3::Identity() + w + 0.5 * w * w;
  const So3Coeffs k = so3_coeffs(theta);
  return Mat3::Identity() + k.a * w + k.b * w * w;
}

Vec3 so3_log(const Mat3& rotation) {
  const Vec3 v = 0.5 * Vec3(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
                            rotation(1, 0) - rotation(0, 1));
  const double s = v.norm();
  const double c = std::clamp(0.5 * (rotation.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);
  if (theta < kSmallAngle) return v;
  if (c > -0.5) return v * (theta / s);

  // Large angles: recover the axis from the symmetric part, sign from v.
  const Mat3 sym = 0.5 * (rotation + rotation.transpose()) - c * Mat3::Identity();
  Eigen::Index col = 0;
  sym.diagonal().maxCoeff(&col);
  Vec3 axis = sym.col(col);
  axis.normalize();
  if (axis.dot(v) < 0.0) axis = -axis;
  return theta * axis;
}

Mat3 so3_left_jacobian(const Vec3& omega) {
  const So3Coeffs k = so3_coeffs(omega.norm());
  const Mat3 w = skew(omega);
  return Mat3::Identity() + k.b * w + k.c * w * w;
}

Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const Mat3 w = skew(omega);
  return Mat3::Identity() - 0.5 * w + so3_inverse_coeff(omega.norm()) * w * w;
}

Se3 se3_exp(const Twist& xi) {
  return {so3_exp(xi.rotational), so3_left_jacobian(xi.rotational) * xi.translational};
}

Se3 se3_exp(const Vec6& xi) { return se3_exp(Twist(xi)); }

Se3Log se3_log(const Se3& transform) {
  Se3Log out;
  const Vec3 omega = so3_log(transform.rotation());
  out.twist.rotational = omega;
  out.twist.translational = so3_left_jacobian_inverse(omega) * transform.translation();
  out.degenerate = std::numbers::pi - omega.norm() < 1e-6;
  return out;
}

Vec6 se3_log_vec(const Se3& transform) { return se3_log(transform).twist.vector(); }

Mat6 se3_left_jacobian(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  const double theta = omega.norm();
  const double t2 = theta * theta;

  double c1, c2, c3;
  if (theta < kSeriesAngle) {
    c1 = 1.0 / 6.0 - t2 / 120.0;
    c2 = 1.0 / 24.0 - t2 / 720.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    c1 = (theta - s) / (t2 * theta);
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta);
  }
  const Mat3 w = skew(omega);
  const Mat3 p = skew(rho);
  const Mat3 wp = w * p;
  const Mat3 pw = p * w;
  const Mat3 wpw = wp * w;
  const Mat3 q = 0.5 * p + c1 * (wp + pw + wpw) + c2 * (w * wp + pw * w - 3.0 * wpw) +
                 c3 * (wpw * w + w * wpw);

  Mat6 j = Mat6::Zero();
  const Mat3 jr = so3_left_jacobian(omega);
  j.topLeftCorner<3, 3>() = jr;
  j.bottomRightCorner<3, 3>() = jr;
  j.topRightCorner<3, 3>() = q;
  return j;
}

Mat6 se3_left_jacobian_inverse(const Vec6& xi) {
  const Mat6 j = se3_left_jacobian(xi);
  const Mat3 jinv = so3_left_jacobian_inverse(xi.tail<3>());
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = jinv;
  out.bottomRightCorner<3, 3>() = jinv;
  out.topRightCorner<3, 3>() = -jinv * j.topRightCorner<3, 3>() * jinv;
  return out;
}

Mat6 se3_right_jacobian_inverse(const Vec6& xi) { return se3_left_jacobian_inverse(-xi); }

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("intrinsics: focal lengths must be positive");
  if (width < 1 || height < 1) throw InputError("intrinsics: image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InputError("intrinsics: principal point outside the image");
  }
}

Intrinsics Intrinsics::at_level(int level) const {
  const double s = std::ldexp(1.0, level);
  Intrinsics k = *this;
  k.fx = fx / s;
  k.fy = fy / s;
  k.cx = (cx + 0.5) / s - 0.5;
  k.cy = (cy + 0.5) / s - 0.5;
  k.width = width >> level;
  k.height = height >> level;
  return k;
}

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Vec2 project(const Vec3& point, const Intrinsics& k) {
  if (!(point.z() > 0.0)) throw GeometryError("project: point not in front of the camera");
  return {k.fx * point.x() / point.z() + k.cx, k.fy * point.y() / point.z() + k.cy};
}

Vec3 backproject(const Vec2& pixel, double depth, const Intrinsics& k) {
  if (!(depth > 0.0)) throw GeometryError("backproject: depth must be positive");
  return {(pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth};
}

Mat23 project_jacobian(const Vec3& point, const Intrinsics& k) {
  const double iz = 1.0 / point.z();
  Mat23 j;
  j << k.fx * iz, 0.0, -k.fx * point.x() * iz * iz, 0.0, k.fy * iz, -k.fy * point.y() * iz * iz;
  return j;
}

void PoseCovariance::validate() const {
  for (int i = 0; i < 6; ++i) {
    if (!(diagonal(i) > 0.0) || !std::isfinite(diagonal(i))) {
      throw InputError("pose covariance: diagonal entries must be positive and finite");
    }
  }
}

ChainedPrior chain_pose_priors_full(std::span<const PosePrior> priors) {
  if (priors.empty()) throw InputError("chain_pose_priors: empty sequence");
  ChainedPrior out{priors.front().pose, priors.front().covariance.matrix()};
  for (std::size_t i = 1; i < priors.size(); ++i) {
    const Mat6 ad = priors[i].pose.adjoint();
    out.covariance = ad * out.covariance * ad.transpose() + priors[i].covariance.matrix();
    out.pose = priors[i].pose * out.pose;
  }
  return out;
}

PosePrior chain_pose_priors(std::span<const PosePrior> priors) {
  const ChainedPrior full = chain_pose_priors_full(priors);
  return {full.pose, PoseCovariance(full.covariance.diagonal())};
}

Alignment umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target,
                        bool with_scale) {
  if (source.size() != target.size()) throw GeometryError("umeyama_align: size mismatch");
  if (source.size() < 3) throw GeometryError("umeyama_align: need at least 3 points");
  const auto src = stack(source);
  const auto dst = stack(target);
  if (!has_planar_spread(src) || !has_planar_spread(dst)) {
    throw GeometryError("umeyama_align: degenerate (collinear) point spread");
  }
  const Eigen::Matrix4d m = Eigen::umeyama(src, dst, with_scale);
  Alignment out;
  const Mat3 sr = m.topLeftCorner<3, 3>();
  out.scale = with_scale ? std::cbrt(sr.determinant()) : 1.0;
  out.transform = Se3(sr / out.scale, m.topRightCorner<3, 1>());
  return out;
}

}  // namespace d3vo

#pragma once

// Rigid-body transforms, pinhole projection, pose-prior chaining and
// point-set alignment.
//
// Twist coordinates are ordered (translational, rotational). Perturbations are
// applied on the left: T' = exp(delta) * T. Poses stored in keyframes and
// tracking graphs are world-to-camera; trajectories written to disk are
// camera-to-world.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <span>
#include <vector>

namespace d3vo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

inline constexpr double kSmallAngle = 1e-9;

struct Twist {
  Vec3 translational = Vec3::Zero();
  Vec3 rotational = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& trans, const Vec3& rot) : translational(trans), rotational(rot) {}
  explicit Twist(const Vec6& v) : translational(v.head<3>()), rotational(v.tail<3>()) {}

  Vec6 vector() const {
    Vec6 v;
    v << translational, rotational;
    return v;
  }
};

class Se3 {
 public:
  Se3() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Se3(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Se3 identity() { return {}; }
  static Se3 from_matrix(const Eigen::Matrix4d& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Se3 inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -rt * translation_};
  }

  Se3 operator*(const Se3& rhs) const {
    return {rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_};
  }

  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

  Eigen::Matrix4d matrix() const;

  /// Adjoint for (translational, rotational) ordering:
  /// exp(Ad * xi) = T * exp(xi) * T^-1.
  Mat6 adjoint() const;

  /// Orthonormal rotation with determinant +1, finite translation.
  bool is_valid(double tol = 1e-9) const;

  /// Re-orthonormalizes the rotation (nearest rotation in Frobenius norm).
  Se3 normalized() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& rotation);
/// SO(3) left Jacobian and its inverse.
Mat3 so3_left_jacobian(const Vec3& omega);
Mat3 so3_left_jacobian_inverse(const Vec3& omega);

Se3 se3_exp(const Twist& xi);
Se3 se3_exp(const Vec6& xi);

struct Se3Log {
  Twist twist;
  /// Rotation angle within 1e-6 of pi: the axis sign is ambiguous.
  bool degenerate = false;
};

Se3Log se3_log(const Se3& transform);
/// Shorthand returning only the 6-vector of the principal logarithm.
Vec6 se3_log_vec(const Se3& transform);

/// SE(3) left Jacobian J_l with exp(xi + d) ~= exp(J_l(xi) d) exp(xi).
Mat6 se3_left_jacobian(const Vec6& xi);
Mat6 se3_left_jacobian_inverse(const Vec6& xi);
/// J_r(xi) = J_l(-xi).
Mat6 se3_right_jacobian_inverse(const Vec6& xi);

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws InputError when focal lengths or principal point are out of range.
  void validate() const;

  /// Intrinsics of pyramid level `level`, where level pixels are 2x2 boxes of
  /// the finer level (pixel centers at integer coordinates).
  Intrinsics at_level(int level) const;

  Mat3 matrix() const;
};

/// Throws GeometryError when the point is not in front of the camera.
Vec2 project(const Vec3& point, const Intrinsics& intrinsics);
/// Throws GeometryError for non-positive depth.
Vec3 backproject(const Vec2& pixel, double depth, const Intrinsics& intrinsics);

/// Jacobian of the projection with respect to the camera-frame point.
Mat23 project_jacobian(const Vec3& point, const Intrinsics& intrinsics);

struct PoseCovariance {
  Vec6 diagonal = Vec6::Constant(1e-4);

  PoseCovariance() = default;
  explicit PoseCovariance(const Vec6& diag) : diagonal(diag) {}
  static PoseCovariance uniform(double variance) {
    return PoseCovariance(Vec6::Constant(variance));
  }

  void validate() const;
  Mat6 matrix() const { return diagonal.asDiagonal(); }
  Mat6 information() const { return diagonal.cwiseInverse().asDiagonal(); }
};

/// Relative pose from frame k-1 to frame k (maps points in k-1 to k) and the
/// covariance of its left perturbation.
struct PosePrior {
  Se3 pose;
  PoseCovariance covariance;
};

struct ChainedPrior {
  Se3 pose;
  Mat6 covariance = Mat6::Zero();
};

/// Composes consecutive relative priors P_n * ... * P_1 and transports the
/// covariance with the adjoint, keeping the full 6x6 matrix.
ChainedPrior chain_pose_priors_full(std::span<const PosePrior> priors);

/// As chain_pose_priors_full, re-diagonalized at the end.
PosePrior chain_pose_priors(std::span<const PosePrior> priors);

struct Alignment {
  Se3 transform;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (transform.rotation() * p) + transform.translation(); }
};

/// Least-squares similarity/rigid alignment mapping `source` onto `target`.
/// Throws GeometryError for fewer than 3 points or a collinear spread.
Alignment umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target,
                        bool with_scale);

}  // namespace d3vo

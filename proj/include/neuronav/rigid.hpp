#pragma once

// SE(3) transforms as unit quaternion + translation (millimetres).

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace neuronav {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct RigidTransform {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_translation(const Vec3& t) {
    return {Eigen::Quaterniond::Identity(), t};
  }

  static RigidTransform from_rotation_translation(const Mat3& r, const Vec3& t) {
    return {Eigen::Quaterniond(r).normalized(), t};
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static RigidTransform from_matrix(const Mat4& m) {
    return from_rotation_translation(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
  }
};

/// Pose of the marker frame expressed in the camera frame.
using RigidPose = RigidTransform;

/// Maps p to a(b(p)).
inline RigidTransform rigid_compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

inline RigidTransform rigid_inverse(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.conjugate().normalized();
  out.translation = -(out.rotation * t.translation);
  return out;
}

/// Rotation angle (radians) of a^-1 * b.
inline double rotation_distance(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return Eigen::AngleAxisd((a.conjugate() * b).normalized()).angle();
}

/// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

/// exp map of an axis-angle vector.
inline Eigen::Quaterniond quat_exp(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
}

}  // namespace neuronav

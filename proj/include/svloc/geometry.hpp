#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

#include "svloc/common.hpp"

namespace svloc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Wrap to [0, 2*pi)
inline double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  return a;
}

// Wrap difference to (-pi, pi]
inline double angle_diff(double a, double b) {
  double d = std::fmod(a - b, kTwoPi);
  if (d > kPi) d -= kTwoPi;
  if (d <= -kPi) d += kTwoPi;
  return d;
}

inline Mat3 rot_z(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

// Rigid camera-to-world transform. World +Z is up; gravity-aligned poses
// have zero roll/pitch.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  bool is_orthonormal(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity())
                   .cwiseAbs()
                   .maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

// Camera axes: +x right, +y down, +z forward (image convention). At yaw 0
// the camera looks along world +X with world +Z as up.
inline Mat3 camera_base_rotation() {
  Mat3 r;
  // columns: right=(0,-1,0), down=(0,0,-1), forward=(1,0,0) in world coords
  r << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  return r;
}

inline Pose camera_pose(const Vec3& position, double yaw) {
  return Pose{rot_z(yaw) * camera_base_rotation(), position};
}

// Heading of a gravity-aligned camera pose (direction of forward axis).
inline double pose_yaw(const Pose& p) {
  const Vec3 fwd = p.rotation.col(2);
  return wrap_angle(std::atan2(fwd.y(), fwd.x()));
}

inline bool is_gravity_aligned(const Pose& p, double tol = 1e-6) {
  // camera up (-y axis) must coincide with world +Z
  const Vec3 up = -p.rotation.col(1);
  return (up - Vec3(0, 0, 1)).norm() <= tol;
}

}  // namespace svloc

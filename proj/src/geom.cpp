#include "peghole/geom.hpp"

#include <algorithm>
#include <cmath>

namespace peghole::geom {

RotationMatrix rotation_about_axis(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n < kDegenerateNormTol) throw DegenerateKeypoints("rotation axis has zero norm");
  const Vec3 u = axis / n;
  const double c = std::cos(angle), s = std::sin(angle), ic = 1.0 - c;
  RotationMatrix r;
  r.m = {{{c + u.x * u.x * ic, u.x * u.y * ic - u.z * s, u.x * u.z * ic + u.y * s},
          {u.y * u.x * ic + u.z * s, c + u.y * u.y * ic, u.y * u.z * ic - u.x * s},
          {u.z * u.x * ic - u.y * s, u.z * u.y * ic + u.x * s, c + u.z * u.z * ic}}};
  return r;
}

double angle_between(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < kDegenerateNormTol || nb < kDegenerateNormTol)
    throw DegenerateKeypoints("angle_between: zero-norm vector");
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c);
}

RotationMatrix rotation_from_keypoints(const KeypointTriple& kp) {
  const Vec3 vx = kp.k2 - kp.k1;
  const Vec3 vz = kp.k3 - kp.k1;
  if (vx.norm() < kDegenerateNormTol || vz.norm() < kDegenerateNormTol)
    throw DegenerateKeypoints("keypoint direction vector has ~zero norm");
  const Vec3 vy = vz.cross(vx);
  if (vy.norm() < kDegenerateNormTol)
    throw DegenerateKeypoints("keypoint direction vectors are ~parallel");
  const Vec3 z = vz.normalized();
  const Vec3 y = vy.normalized();
  const Vec3 x = y.cross(z).normalized();
  return RotationMatrix::from_columns(x, y, z);
}

Pose pose_from_keypoints(const KeypointTriple& kp) {
  return Pose{rotation_from_keypoints(kp), kp.k1};
}

RotationMatrix euler_to_rotation(const EulerAngles& e) {
  const double cx = std::cos(e.x), sx = std::sin(e.x);
  const double cy = std::cos(e.y), sy = std::sin(e.y);
  const double cz = std::cos(e.z), sz = std::sin(e.z);
  // R = Rz * Ry * Rx (fixed-axis X, then Y, then Z).
  RotationMatrix r;
  r.m = {{{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
          {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
          {-sy, cy * sx, cy * cx}}};
  return r;
}

EulerAngles rotation_to_euler(const RotationMatrix& R) {
  const double s = -R(2, 0);  // sin(y)
  if (std::abs(R(2, 0)) >= 1.0 - kGimbalTol)
    throw GimbalLock("pitch within 1e-9 of +-pi/2");
  EulerAngles e;
  e.y = std::asin(std::clamp(s, -1.0, 1.0));
  e.x = std::atan2(R(2, 1), R(2, 2));
  e.z = std::atan2(R(1, 0), R(0, 0));
  // atan2 can return exactly -pi; angles are canonically in (-pi, pi].
  if (e.x <= -M_PI) e.x = M_PI;
  if (e.z <= -M_PI) e.z = M_PI;
  return e;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose{a.R * b.R, a.R * b.t + a.t};
}

Pose invert(const Pose& p) {
  const RotationMatrix rt = p.R.transpose();
  return Pose{rt, -(rt * p.t)};
}

Vec3 apply(const Pose& p, const Vec3& v) { return p.R * v + p.t; }

double gaussian_confidence(const Vec3& x, const Vec3& p, double sigma) {
  if (!(sigma > 0.0)) throw InvalidSigma("sigma must be > 0");
  return std::exp(-(x - p).norm2() / (2.0 * sigma * sigma));
}

}  // namespace peghole::geom

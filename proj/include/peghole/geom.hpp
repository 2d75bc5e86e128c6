#pragma once

#include <array>
#include <cmath>

#include "peghole/errors.hpp"

namespace peghole::geom {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized() const { return *this / norm(); }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// 3x3 rotation matrix, row-major storage.  Columns are the rotated frame's
// basis vectors expressed in the parent frame.
struct RotationMatrix {
  std::array<std::array<double, 3>, 3> m{};

  static RotationMatrix identity() {
    RotationMatrix r;
    r.m = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    return r;
  }

  static RotationMatrix from_columns(const Vec3& x, const Vec3& y, const Vec3& z) {
    RotationMatrix r;
    r.m = {{{x.x, y.x, z.x}, {x.y, y.y, z.y}, {x.z, y.z, z.z}}};
    return r;
  }

  double operator()(int i, int j) const { return m[i][j]; }
  double& operator()(int i, int j) { return m[i][j]; }

  Vec3 col(int j) const { return {m[0][j], m[1][j], m[2][j]}; }
  Vec3 col_x() const { return col(0); }
  Vec3 col_y() const { return col(1); }
  Vec3 col_z() const { return col(2); }

  RotationMatrix transpose() const {
    RotationMatrix r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }

  Vec3 operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }

  RotationMatrix operator*(const RotationMatrix& o) const {
    RotationMatrix r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
        r.m[i][j] = s;
      }
    return r;
  }

  double det() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }

  // Max-abs deviation of R^T R from the identity.
  double orthonormality_error() const {
    const RotationMatrix g = transpose() * (*this);
    double e = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        e = std::max(e, std::abs(g.m[i][j] - (i == j ? 1.0 : 0.0)));
    return e;
  }

  bool is_orthonormal(double tol = 1e-9) const {
    return orthonormality_error() < tol && std::abs(det() - 1.0) < tol;
  }
};

// Fixed-axis (extrinsic) XYZ rotation angles, radians, each in (-pi, pi].
// euler_to_rotation composes R = Rz(z) * Ry(y) * Rx(x).
struct EulerAngles {
  double x = 0.0, y = 0.0, z = 0.0;

  EulerAngles() = default;
  EulerAngles(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Rigid transform: p_world = R * p_local + t.
struct Pose {
  RotationMatrix R = RotationMatrix::identity();
  Vec3 t;

  static Pose identity() { return Pose{}; }
};

struct KeypointTriple {
  Vec3 k1;  // hole center (mouth)
  Vec3 k2;  // marker along hole-frame +x
  Vec3 k3;  // marker along hole-frame +z
};

constexpr double kDegenerateNormTol = 1e-12;
constexpr double kGimbalTol = 1e-9;

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

// Rotation by `angle` radians about a (non-zero) axis, Rodrigues form.
RotationMatrix rotation_about_axis(const Vec3& axis, double angle);

// Angle in [0, pi] between two non-zero vectors.
double angle_between(const Vec3& a, const Vec3& b);

// Builds the hole-frame orientation from the three keypoints:
//   z = normalize(k3 - k1); y = normalize((k3 - k1) x (k2 - k1));
//   x = normalize(y x z).  All three columns are normalized.
// Throws DegenerateKeypoints when either direction vector or their cross
// product has norm below 1e-12.
RotationMatrix rotation_from_keypoints(const KeypointTriple& kp);

// Full hole pose: rotation as above, translation = k1.
Pose pose_from_keypoints(const KeypointTriple& kp);

RotationMatrix euler_to_rotation(const EulerAngles& e);

// Canonical decomposition (y in [-pi/2, pi/2]).  Throws GimbalLock when
// |R(2,0)| is within 1e-9 of 1.
EulerAngles rotation_to_euler(const RotationMatrix& R);

Pose compose(const Pose& a, const Pose& b);   // a then b applied outermost: a*b
Pose invert(const Pose& p);
Vec3 apply(const Pose& p, const Vec3& v);

// exp(-|x - p|^2 / (2 sigma^2)).  Throws InvalidSigma for sigma <= 0.
double gaussian_confidence(const Vec3& x, const Vec3& p, double sigma);

}  // namespace peghole::geom

#include "peghole/geom.hpp"

#include <doctest.h>

#include "peghole/rng.hpp"

using namespace peghole;
using geom::EulerAngles;
using geom::KeypointTriple;
using geom::Pose;
using geom::RotationMatrix;
using geom::Vec3;

namespace {

bool near(const Vec3& a, const Vec3& b, double tol = 1e-12) {
  return (a - b).norm() <= tol;
}

double matrix_gap(const RotationMatrix& a, const RotationMatrix& b) {
  double e = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) e = std::max(e, std::abs(a(i, j) - b(i, j)));
  return e;
}

// Independent Gram-Schmidt construction of the keypoint frame, written
// directly from the definition so the library result has an outside oracle.
RotationMatrix gram_schmidt_frame(const KeypointTriple& kp) {
  const Vec3 z = (kp.k3 - kp.k1).normalized();
  const Vec3 y = (kp.k3 - kp.k1).cross(kp.k2 - kp.k1).normalized();
  const Vec3 x = y.cross(z).normalized();
  return RotationMatrix::from_columns(x, y, z);
}

Vec3 random_unit(Rng& rng) {
  while (true) {
    const Vec3 v{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                 rng.uniform(-1.0, 1.0)};
    const double n = v.norm();
    if (n > 0.1 && n < 1.0) return v / n;
  }
}

RotationMatrix random_rotation(Rng& rng) {
  return geom::rotation_about_axis(random_unit(rng),
                                   rng.uniform(-M_PI, M_PI));
}

}  // namespace

TEST_CASE("axis-aligned keypoints give the identity frame") {
  const KeypointTriple kp{{0, 0, 0}, {0.025, 0, 0}, {0, 0, 0.025}};
  const RotationMatrix R = geom::rotation_from_keypoints(kp);
  CHECK(matrix_gap(R, RotationMatrix::identity()) < 1e-12);

  const Pose p = geom::pose_from_keypoints(kp);
  CHECK(near(p.t, {0, 0, 0}));
}

TEST_CASE("keypoints rotated a quarter turn about z give the rotated frame") {
  const KeypointTriple kp{{0, 0, 0}, {0, 0.025, 0}, {0, 0, 0.025}};
  const RotationMatrix R = geom::rotation_from_keypoints(kp);
  CHECK(near(R.col_x(), {0, 1, 0}));
  CHECK(near(R.col_y(), {-1, 0, 0}));
  CHECK(near(R.col_z(), {0, 0, 1}));
}

TEST_CASE("a tilted k2 still yields an orthonormal frame with z from k3") {
  const KeypointTriple kp{{0, 0, 0}, {0.02, 0, 0.01}, {0, 0, 0.025}};
  const RotationMatrix R = geom::rotation_from_keypoints(kp);
  CHECK(near(R.col_z(), {0, 0, 1}, 1e-12));
  CHECK(R.orthonormality_error() < 1e-12);
  CHECK(std::abs(R.det() - 1.0) < 1e-12);
  CHECK(matrix_gap(R, gram_schmidt_frame(kp)) < 1e-12);
}

TEST_CASE("keypoint frame matches the Gram-Schmidt oracle on random triples") {
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    KeypointTriple kp;
    kp.k1 = random_unit(rng) * rng.uniform(0.0, 0.5);
    const Vec3 a = random_unit(rng) * rng.uniform(0.01, 0.2);
    const Vec3 b = random_unit(rng) * rng.uniform(0.01, 0.2);
    if (a.cross(b).norm() < 1e-6) continue;
    kp.k2 = kp.k1 + a;
    kp.k3 = kp.k1 + b;
    const RotationMatrix R = geom::rotation_from_keypoints(kp);
    CHECK(matrix_gap(R, gram_schmidt_frame(kp)) < 1e-12);
    CHECK(R.is_orthonormal(1e-9));
    CHECK(near(R.col_z(), (kp.k3 - kp.k1).normalized(), 1e-12));
  }
}

TEST_CASE("keypoint frame ignores translation and marker distance") {
  const KeypointTriple base{{0, 0, 0}, {0.02, 0, 0.01}, {0, 0, 0.025}};
  const RotationMatrix R0 = geom::rotation_from_keypoints(base);

  SUBCASE("translating all three keypoints leaves the rotation unchanged") {
    const Vec3 t{0.3, -0.1, 0.7};
    const KeypointTriple kp{base.k1 + t, base.k2 + t, base.k3 + t};
    CHECK(matrix_gap(geom::rotation_from_keypoints(kp), R0) < 1e-12);
    CHECK(near(geom::pose_from_keypoints(kp).t, t));
  }

  SUBCASE("scaling the marker offsets leaves the rotation unchanged") {
    const KeypointTriple kp{base.k1, base.k1 + (base.k2 - base.k1) * 7.0,
                            base.k1 + (base.k3 - base.k1) * 7.0};
    CHECK(matrix_gap(geom::rotation_from_keypoints(kp), R0) < 1e-12);
  }
}

TEST_CASE("degenerate keypoint layouts are rejected") {
  const Vec3 k1{0, 0, 0};
  SUBCASE("coincident k3") {
    CHECK_THROWS_AS(
        geom::rotation_from_keypoints({k1, {0.025, 0, 0}, k1}),
        DegenerateKeypoints);
  }
  SUBCASE("coincident k2") {
    CHECK_THROWS_AS(
        geom::rotation_from_keypoints({k1, k1, {0, 0, 0.025}}),
        DegenerateKeypoints);
  }
  SUBCASE("collinear markers") {
    CHECK_THROWS_AS(geom::rotation_from_keypoints(
                        {k1, {0, 0, 0.01}, {0, 0, 0.025}}),
                    DegenerateKeypoints);
  }
}

TEST_CASE("euler composition order is Rz * Ry * Rx") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const EulerAngles e{rng.uniform(-1.5, 1.5), rng.uniform(-1.4, 1.4),
                        rng.uniform(-3.0, 3.0)};
    const RotationMatrix expect =
        geom::rotation_about_axis({0, 0, 1}, e.z) *
        geom::rotation_about_axis({0, 1, 0}, e.y) *
        geom::rotation_about_axis({1, 0, 0}, e.x);
    CHECK(matrix_gap(geom::euler_to_rotation(e), expect) < 1e-12);
  }

  const RotationMatrix quarter = geom::euler_to_rotation({0, 0, M_PI / 2});
  CHECK(near(quarter * Vec3{1, 0, 0}, {0, 1, 0}));
}

TEST_CASE("euler decomposition round-trips random rotations") {
  Rng rng(11);
  int tested = 0;
  for (int i = 0; i < 1000; ++i) {
    const RotationMatrix R = random_rotation(rng);
    if (std::abs(R(2, 0)) > 1.0 - 1e-6) continue;  // skip near-gimbal draws
    const EulerAngles e = geom::rotation_to_euler(R);
    CHECK(matrix_gap(geom::euler_to_rotation(e), R) < 1e-9);
    CHECK(std::abs(e.y) <= M_PI / 2 + 1e-12);
    ++tested;
  }
  CHECK(tested > 900);
}

TEST_CASE("gimbal-lock orientations are rejected") {
  CHECK_THROWS_AS(
      geom::rotation_to_euler(geom::rotation_about_axis({0, 1, 0}, M_PI / 2)),
      GimbalLock);
  CHECK_THROWS_AS(
      geom::rotation_to_euler(geom::rotation_about_axis({0, 1, 0}, -M_PI / 2)),
      GimbalLock);
}

TEST_CASE("pose algebra behaves as rigid-transform composition") {
  Rng rng(13);
  const Vec3 v{0.2, -0.4, 0.1};

  SUBCASE("quarter turn about z moves x onto y") {
    Pose p;
    p.R = geom::rotation_about_axis({0, 0, 1}, M_PI / 2);
    CHECK(near(geom::apply(p, {1, 0, 0}), {0, 1, 0}));
  }

  for (int i = 0; i < 50; ++i) {
    Pose a{random_rotation(rng), random_unit(rng)};
    Pose b{random_rotation(rng), random_unit(rng)};
    Pose c{random_rotation(rng), random_unit(rng)};

    // compose applies the right operand first: (a*b)(v) = a(b(v)).
    CHECK(near(geom::apply(geom::compose(a, b), v),
               geom::apply(a, geom::apply(b, v)), 1e-12));

    // associativity
    const Pose ab_c = geom::compose(geom::compose(a, b), c);
    const Pose a_bc = geom::compose(a, geom::compose(b, c));
    CHECK(matrix_gap(ab_c.R, a_bc.R) < 1e-12);
    CHECK(near(ab_c.t, a_bc.t, 1e-12));

    // inverse
    const Pose id = geom::compose(a, geom::invert(a));
    CHECK(matrix_gap(id.R, RotationMatrix::identity()) < 1e-12);
    CHECK(near(id.t, {0, 0, 0}, 1e-12));
    CHECK(near(geom::apply(geom::invert(a), geom::apply(a, v)), v, 1e-12));
  }
}

TEST_CASE("rotation about an axis fixes the axis and respects the angle") {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const Vec3 axis = random_unit(rng);
    const double angle = rng.uniform(-M_PI, M_PI);
    const RotationMatrix R = geom::rotation_about_axis(axis, angle);
    CHECK(R.is_orthonormal(1e-12));
    CHECK(near(R * axis, axis, 1e-12));
  }
  CHECK(geom::angle_between({1, 0, 0}, {0, 1, 0}) ==
        doctest::Approx(M_PI / 2).epsilon(1e-12));
  CHECK(geom::angle_between({1, 0, 0}, {-2, 0, 0}) ==
        doctest::Approx(M_PI).epsilon(1e-12));
}

TEST_CASE("gaussian confidence matches the closed form") {
  const Vec3 p{0.1, 0.2, 0.3};
  const double sigma = 0.025;
  CHECK(geom::gaussian_confidence(p, p, sigma) == doctest::Approx(1.0));
  CHECK(geom::gaussian_confidence(p + Vec3{sigma, 0, 0}, p, sigma) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(geom::gaussian_confidence(p + Vec3{0, 2 * sigma, 0}, p, sigma) ==
        doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(geom::gaussian_confidence(p, p, 0.0), InvalidSigma);
  CHECK_THROWS_AS(geom::gaussian_confidence(p, p, -0.1), InvalidSigma);
}

#include "peghole/simworld.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "peghole/errors.hpp"
#include "peghole/geom.hpp"
#include "peghole/rng.hpp"

using namespace peghole;
using geom::Pose;
using geom::Vec3;
using sim::BodyShape;
using sim::DofMode;
using sim::Scene;
using sim::TrialConfig;

namespace {

// Hole object with its mouth at (x, y, 0.07), axis vertical.
Scene flat_scene(BodyShape body = BodyShape::kCylinder,
                 sim::ProfileKind kind = sim::ProfileKind::kRound) {
  Scene s;
  s.hole.body = body;
  s.hole.profile = sim::hole_profile(kind);
  s.hole.pose = Pose::identity();
  s.hole.pose.t = {0, 0, 0.07};
  s.peg = sim::matching_peg(kind);
  s.camera = sim::default_camera();
  s.ee_pose = Pose::identity();
  s.ee_pose.t = {0, 0, 0.4};
  return s;
}

// End-effector pose that puts the camera at `cam_pos` looking straight down.
Pose ee_for_camera_at(const Vec3& cam_pos) {
  Pose ee;
  ee.t = cam_pos - Vec3{0, 0, 0.10};  // default mount offset along ee +z
  return ee;
}

bool near(const Vec3& a, const Vec3& b, double tol = 1e-12) {
  return (a - b).norm() <= tol;
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("default camera follows the stated intrinsics") {
  const sim::CameraIntrinsics intr = sim::default_intrinsics();
  CHECK(intr.width == 128);
  CHECK(intr.height == 128);
  // 60 degree vertical field of view over 128 pixels.
  CHECK(intr.fy ==
        doctest::Approx(64.0 / std::tan(geom::deg2rad(30.0))).epsilon(1e-12));
  CHECK(intr.fx == intr.fy);
  CHECK(intr.cx == 64.0);
  CHECK(intr.cy == 64.0);
}

TEST_CASE("depth rendering matches analytic ray intersections") {
  Scene s = flat_scene();

  SUBCASE("center pixel over the flat top face reads the exact height") {
    // Camera 0.5 m above the annulus between cavity wall and body rim.
    s.ee_pose = ee_for_camera_at({0.05, 0.0, 0.57});
    const sim::DepthImage img = sim::render_depth(s);
    REQUIRE(img.valid(64, 64));
    CHECK(std::abs(img.at(64, 64) - 0.5) < 1e-6);
  }

  SUBCASE("pixels over the cavity mouth see the bottom face") {
    s.ee_pose = ee_for_camera_at({0.0, 0.0, 0.57});
    const sim::DepthImage img = sim::render_depth(s);
    REQUIRE(img.valid(64, 64));
    CHECK(std::abs(img.at(64, 64) - (0.5 + 0.045)) < 1e-6);
  }

  SUBCASE("a camera facing the sky sees nothing") {
    s.ee_pose.R = geom::rotation_about_axis({1, 0, 0}, M_PI);
    s.ee_pose.t = {0, 0, 0.4};
    const sim::DepthImage img = sim::render_depth(s);
    for (int v = 0; v < img.height; ++v)
      for (int u = 0; u < img.width; ++u) CHECK(!img.valid(u, v));
  }
}

TEST_CASE("back-projection inverts rendering and lands on the surface") {
  Scene s = flat_scene(BodyShape::kCuboid1, sim::ProfileKind::kSquare);
  s.ee_pose = ee_for_camera_at({0.03, -0.02, 0.55});
  s.ee_pose.R = geom::rotation_about_axis({1, 0, 0}, 0.15);

  const sim::DepthImage img = sim::render_depth(s);
  const sim::PointCloud pts = sim::depth_to_cloud(img, s.camera, s.ee_pose);
  REQUIRE(!pts.empty());

  SUBCASE("every cloud point lies on the analytic surface") {
    for (const Vec3& p : pts) CHECK(std::abs(sim::csg_distance(s.hole, p)) < 1e-6);
  }

  SUBCASE("re-projecting returns the source pixel and depth") {
    const Pose cam = sim::camera_world_pose(s);
    const Pose cam_inv = geom::invert(cam);
    size_t k = 0;
    for (int v = 0; v < img.height; ++v) {
      for (int u = 0; u < img.width; ++u) {
        if (!img.valid(u, v)) continue;
        const auto pp =
            sim::project_point(s.camera.intrinsics, geom::apply(cam_inv, pts[k]));
        REQUIRE(pp.in_front);
        CHECK(std::abs(pp.u - u) < 0.5);
        CHECK(std::abs(pp.v - v) < 0.5);
        CHECK(std::abs(pp.depth - img.at(u, v)) < 1e-6);
        ++k;
      }
    }
    CHECK(k == pts.size());
  }

  SUBCASE("translating the end-effector pose translates the cloud") {
    const Vec3 T{0.2, -0.3, 0.1};
    Pose shifted = s.ee_pose;
    shifted.t += T;
    const sim::PointCloud moved = sim::depth_to_cloud(img, s.camera, shifted);
    REQUIRE(moved.size() == pts.size());
    for (size_t i = 0; i < pts.size(); ++i)
      CHECK(near(moved[i], pts[i] + T, 1e-12));
  }

  SUBCASE("an all-invalid image raises EmptyCloud") {
    sim::DepthImage empty;
    empty.width = s.camera.intrinsics.width;
    empty.height = s.camera.intrinsics.height;
    empty.depth.assign(static_cast<size_t>(empty.width) * empty.height, 0.0f);
    CHECK_THROWS_AS(sim::depth_to_cloud(empty, s.camera, s.ee_pose),
                    EmptyCloud);
  }
}

TEST_CASE("scene sampling respects the per-mode degrees of freedom") {
  SUBCASE("3-dof scenes keep the hole axis exactly vertical, profile round") {
    Rng rng(71);
    TrialConfig cfg;
    cfg.dof = DofMode::k3Dof;
    for (int i = 0; i < 50; ++i) {
      const Scene s = sim::sample_scene(cfg, rng);
      CHECK(near(s.hole.pose.R.col_z(), {0, 0, 1}, 0.0));
      CHECK(s.hole.profile.kind == sim::ProfileKind::kRound);
      CHECK(s.peg.kind == sim::ProfileKind::kRound);
      CHECK(s.hole.pose.t.z == 0.07);
      CHECK(std::abs(s.hole.pose.t.x) <= s.workspace.table_half);
      CHECK(std::abs(s.hole.pose.t.y) <= s.workspace.table_half);
    }
  }

  SUBCASE("4-dof scenes add bounded yaw, axis still vertical") {
    Rng rng(72);
    TrialConfig cfg;
    cfg.dof = DofMode::k4Dof;
    for (int i = 0; i < 50; ++i) {
      const Scene s = sim::sample_scene(cfg, rng);
      CHECK(near(s.hole.pose.R.col_z(), {0, 0, 1}, 1e-12));
      CHECK(s.hole.profile.kind == sim::ProfileKind::kSquare);
      const double yaw =
          std::atan2(s.hole.pose.R(1, 0), s.hole.pose.R(0, 0));
      CHECK(std::abs(yaw) <= geom::deg2rad(cfg.yaw_max_deg) + 1e-12);
    }
  }

  SUBCASE("6-dof tilt stays inside the configured range over 1000 draws") {
    Rng rng(73);
    TrialConfig cfg;
    cfg.dof = DofMode::k6Dof;
    for (int i = 0; i < 1000; ++i) {
      const Scene s = sim::sample_scene(cfg, rng);
      const double tilt =
          geom::angle_between(s.hole.pose.R.col_z(), {0, 0, 1});
      CHECK(tilt >= -1e-12);
      CHECK(tilt <= geom::deg2rad(50.0) + 1e-9);
    }
  }

  SUBCASE("the end-effector starts upright at the exact initial distance") {
    Rng rng(74);
    for (double err : {0.15, 0.30}) {
      TrialConfig cfg;
      cfg.initial_error = err;
      for (int i = 0; i < 50; ++i) {
        const Scene s = sim::sample_scene(cfg, rng);
        CHECK(std::abs((s.ee_pose.t - s.hole.pose.t).norm() - err) < 1e-9);
        CHECK(s.ee_pose.R.orthonormality_error() == 0.0);
        const double cone =
            geom::angle_between(s.ee_pose.t - s.hole.pose.t, {0, 0, 1});
        CHECK(cone <= geom::deg2rad(cfg.approach_cone_deg) + 1e-9);
      }
    }
  }

  SUBCASE("identical seeds give bit-identical scenes") {
    TrialConfig cfg;
    Rng a(75), b(75);
    const Scene s1 = sim::sample_scene(cfg, a);
    const Scene s2 = sim::sample_scene(cfg, b);
    CHECK(near(s1.hole.pose.t, s2.hole.pose.t, 0.0));
    CHECK(near(s1.hole.pose.R.col_x(), s2.hole.pose.R.col_x(), 0.0));
    CHECK(near(s1.ee_pose.t, s2.ee_pose.t, 0.0));
    CHECK(s1.hole.body == s2.hole.body);
  }

  SUBCASE("an unreachable tilt range exhausts sampling") {
    Rng rng(76);
    TrialConfig cfg;
    cfg.dof = DofMode::k6Dof;
    cfg.tilt_lo_deg = 50.0;
    cfg.tilt_hi_deg = 50.0;
    CHECK_THROWS_AS(sim::sample_scene(cfg, rng), SamplingExhausted);
  }

  SUBCASE("invalid configurations are rejected") {
    Rng rng(77);
    TrialConfig cfg;
    cfg.initial_error = 0.0;
    CHECK_THROWS_AS(sim::sample_scene(cfg, rng), CountOutOfRange);
    cfg.initial_error = 0.15;
    cfg.tilt_hi_deg = 51.0;
    CHECK_THROWS_AS(sim::sample_scene(cfg, rng), CountOutOfRange);
  }
}

TEST_CASE("move_ee teleports rigidly inside the workspace") {
  Scene s = flat_scene();

  SUBCASE("moving to the current pose changes nothing") {
    const Scene s2 = sim::move_ee(s, s.ee_pose);
    CHECK(near(s2.ee_pose.t, s.ee_pose.t, 0.0));
  }

  SUBCASE("the last of two moves wins") {
    Pose a = s.ee_pose, b = s.ee_pose;
    a.t = {0.1, 0.0, 0.3};
    b.t = {-0.1, 0.2, 0.5};
    const Scene s2 = sim::move_ee(sim::move_ee(s, a), b);
    CHECK(near(s2.ee_pose.t, b.t, 0.0));
  }

  SUBCASE("the camera rides along: world pose = ee pose composed with mount") {
    Pose target = s.ee_pose;
    target.R = geom::rotation_about_axis({0, 1, 0}, 0.3);
    target.t = {0.05, -0.05, 0.45};
    const Scene s2 = sim::move_ee(s, target);
    const Pose cam = sim::camera_world_pose(s2);
    const Pose expect = geom::compose(target, s.camera.mount);
    CHECK(near(cam.t, expect.t, 1e-12));
    CHECK(near(cam.R.col_z(), expect.R.col_z(), 1e-12));
  }

  SUBCASE("targets outside the workspace are rejected") {
    Pose far = s.ee_pose;
    far.t = {2.0, 0.0, 0.4};
    CHECK_THROWS_AS(sim::move_ee(s, far), OutOfWorkspace);
  }
}

TEST_CASE("insertion succeeds or fails by geometric containment") {
  Scene s = flat_scene();
  Pose aligned;
  aligned.t = s.hole.pose.t + Vec3{0, 0, 0.05};

  SUBCASE("a perfectly aligned peg reaches the bottom") {
    const auto out = sim::check_insertion(s, aligned);
    CHECK(out.success);
    CHECK(out.depth_reached >= 0.045 - 1e-4);
    CHECK(out.lateral_offset < 1e-12);
  }

  SUBCASE("1 mm of lateral offset stays inside the 2 mm margin") {
    Pose p = aligned;
    p.t += Vec3{0.001, 0, 0};
    CHECK(sim::check_insertion(s, p).success);
  }

  SUBCASE("3 mm of lateral offset exceeds the margin") {
    Pose p = aligned;
    p.t += Vec3{0.003, 0, 0};
    CHECK(!sim::check_insertion(s, p).success);
  }

  SUBCASE("tilt consumes margin through the peg-length lever arm") {
    Pose p = aligned;
    p.R = geom::rotation_about_axis({1, 0, 0}, geom::deg2rad(3.0));
    CHECK(!sim::check_insertion(s, p).success);
    p.R = geom::rotation_about_axis({1, 0, 0}, geom::deg2rad(0.25));
    CHECK(sim::check_insertion(s, p).success);
  }

  SUBCASE("containment is monotone in the lateral offset") {
    for (int i = 0; i < 10; ++i) {
      Pose p = aligned;
      p.t += Vec3{0.0002 * i, 0, 0};
      CHECK(sim::check_insertion(s, p).success);
    }
  }

  SUBCASE("square pegs must also match the yaw") {
    Scene sq = flat_scene(BodyShape::kCuboid1, sim::ProfileKind::kSquare);
    Pose p;
    p.t = sq.hole.pose.t + Vec3{0, 0, 0.05};
    p.R = geom::rotation_about_axis({0, 0, 1}, geom::deg2rad(10.0));
    CHECK(!sim::check_insertion(sq, p).success);
    p.R = geom::rotation_about_axis({0, 0, 1}, geom::deg2rad(1.0));
    CHECK(sim::check_insertion(sq, p).success);
  }

  SUBCASE("a tilted hole accepts a peg aligned with its axis") {
    Scene tilted = flat_scene();
    tilted.hole.pose.R = geom::rotation_about_axis({0, 1, 0}, 0.4);
    Pose p;
    p.R = tilted.hole.pose.R;
    p.t = tilted.hole.pose.t + tilted.hole.pose.R.col_z() * 0.05;
    const auto out = sim::check_insertion(tilted, p);
    CHECK(out.success);
    CHECK(out.tilt < 1e-9);
  }
}

TEST_CASE("capture_cloud resamples deterministically onto the surface") {
  Scene s = flat_scene();
  s.ee_pose = ee_for_camera_at({0.0, 0.0, 0.47});

  Rng a(81), b(81);
  const auto c1 = sim::capture_cloud(s, 256, 0.0, a);
  const auto c2 = sim::capture_cloud(s, 256, 0.0, b);
  REQUIRE(c1.size() == 256);
  REQUIRE(c2.size() == 256);
  for (size_t i = 0; i < c1.size(); ++i) CHECK(near(c1[i], c2[i], 0.0));
  for (const Vec3& p : c1) CHECK(std::abs(sim::csg_distance(s.hole, p)) < 1e-6);

  // n_points <= 0 keeps the raw back-projection.
  Rng c(82);
  const auto raw = sim::capture_cloud(s, 0, 0.0, c);
  CHECK(raw.size() > 256);
}

TEST_CASE("scene and depth files round-trip exactly") {
  Rng rng(83);
  TrialConfig cfg;
  const Scene s = sim::sample_scene(cfg, rng);

  SUBCASE("scene description") {
    const std::string path = tmp_path("peghole_test_scene.txt");
    sim::save_scene(path, s);
    const Scene r = sim::load_scene(path);
    CHECK(r.hole.body == s.hole.body);
    CHECK(r.hole.profile.kind == s.hole.profile.kind);
    CHECK(near(r.hole.pose.t, s.hole.pose.t, 0.0));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(r.hole.pose.R(i, j) == s.hole.pose.R(i, j));
    CHECK(near(r.ee_pose.t, s.ee_pose.t, 0.0));
  }

  SUBCASE("depth image") {
    Scene view = flat_scene();
    view.ee_pose = ee_for_camera_at({0.0, 0.0, 0.5});
    const sim::DepthImage img = sim::render_depth(view);
    const std::string path = tmp_path("peghole_test_depth.bin");
    sim::save_depth(path, img, view.camera.intrinsics);
    sim::CameraIntrinsics intr;
    const sim::DepthImage r = sim::load_depth(path, &intr);
    CHECK(r.width == img.width);
    CHECK(r.depth == img.depth);
    CHECK(intr.fx == view.camera.intrinsics.fx);

    // Flip one payload byte: the checksum must catch it.
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes{std::istreambuf_iterator<char>(in),
                            std::istreambuf_iterator<char>()};
    in.close();
    bytes[bytes.size() / 2] ^= 0x10;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(sim::load_depth(path), CorruptFile);
  }
}

TEST_CASE("body names round-trip and reject unknowns") {
  for (BodyShape b : {BodyShape::kCuboid1, BodyShape::kCuboid2,
                      BodyShape::kCylinder, BodyShape::kPentagon}) {
    CHECK(sim::body_from_name(sim::body_name(b)) == b);
  }
  CHECK_THROWS_AS(sim::body_from_name("torus"), CorruptFile);
}

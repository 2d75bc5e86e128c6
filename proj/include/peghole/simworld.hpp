#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "peghole/cloud.hpp"
#include "peghole/geom.hpp"
#include "peghole/rng.hpp"

namespace peghole::sim {

using cloud::PointCloud;
using geom::Pose;
using geom::Vec3;

// ---------------------------------------------------------------------------
// World model.  Kinematic only: a free-flying end-effector carrying a peg and
// a depth camera over a table with one hole object.  The end-effector frame
// has its origin at the peg tip with the peg body extending along +z; the
// hole frame has its origin at the mouth center with +z pointing out of the
// cavity.

enum class BodyShape { kCuboid1, kCuboid2, kCylinder, kPentagon };
enum class ProfileKind { kRound, kSquare };

// Cross-section of a hole or peg: radius for round, half side for square.
struct Profile {
  ProfileKind kind = ProfileKind::kRound;
  double half_extent = 0.025;
};

struct BodyDims {
  double height = 0.07;
  double half_x = 0.0, half_y = 0.0;  // cuboids
  double radius = 0.0;                // cylinder
  double circumradius = 0.0;          // pentagonal prism
};

BodyDims body_dims(BodyShape shape);

// Stable names used in files and tables: cuboid1|cuboid2|cylinder|pentagon.
std::string body_name(BodyShape s);
BodyShape body_from_name(const std::string& s);  // throws CorruptFile

struct HoleObject {
  BodyShape body = BodyShape::kCylinder;
  Profile profile;             // round r=0.025 or square half-side 0.025
  double hole_depth = 0.045;
  Pose pose;                   // mouth center, +z out of the hole
};

struct Peg {
  ProfileKind kind = ProfileKind::kRound;
  double half_extent = 0.023;  // 4 mm diametral clearance vs matching hole
  double length = 0.10;
};

Profile hole_profile(ProfileKind kind);
Peg matching_peg(ProfileKind kind);

struct CameraIntrinsics {
  int width = 128;
  int height = 128;
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
};

// 128x128, 60 degree vertical field of view, principal point at the image
// center; pixel (u, v) casts its ray through coordinates exactly (u, v).
CameraIntrinsics default_intrinsics();

struct Camera {
  CameraIntrinsics intrinsics;
  Pose mount;  // camera frame expressed in the end-effector frame
};

// Mounted 0.10 m behind the peg tip looking along the peg axis (camera +z is
// the viewing direction, +x matches the end-effector +x).
Camera default_camera();

struct Workspace {
  Vec3 lo{-0.6, -0.6, 0.0};
  Vec3 hi{0.6, 0.6, 0.8};
  double table_half = 0.25;  // hole centers sample from a 0.5 m square

  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y &&
           p.z >= lo.z && p.z <= hi.z;
  }
};

struct Scene {
  HoleObject hole;
  Peg peg;
  Pose ee_pose;
  Camera camera;
  Workspace workspace;
};

enum class DofMode { k3Dof, k4Dof, k6Dof };

// 3dof tasks use the round profile; 4dof/6dof use the square profile.
struct TrialConfig {
  DofMode dof = DofMode::k6Dof;
  double initial_error = 0.15;          // meters, exact ee-to-hole distance
  double tilt_lo_deg = 0.0;             // 6dof hole tilt range
  double tilt_hi_deg = 50.0;
  double yaw_max_deg = 40.0;            // 4dof/6dof z rotation range
  double approach_cone_deg = 30.0;      // ee offset direction from vertical
  double noise_sigma = 0.001;           // test-time cloud noise, meters
  std::uint64_t seed = 0;
  std::optional<BodyShape> body;        // fixed shape, or sampled per scene
};

struct TrialResult {
  bool success = false;
  int servo_iterations = 0;
  double residual_translation = 0.0;  // lateral misalignment at insertion
  double residual_tilt = 0.0;         // radians, peg axis vs hole axis
  double wall_time = 0.0;             // seconds
  std::string error;                  // nonempty when a stage failed
};

// ---------------------------------------------------------------------------
// Operations

// Randomized scene for one trial.  3dof: random XY hole translation only;
// 4dof adds a z rotation; 6dof adds x/y rotations with the resulting tilt
// (hole axis vs vertical) inside [tilt_lo, tilt_hi] (bounded retries, then
// SamplingExhausted).  The end-effector starts upright at exactly
// initial_error meters from the hole mouth, offset within the approach cone.
Scene sample_scene(const TrialConfig& cfg, Rng& rng);

// World pose of the camera: ee_pose composed with the mount offset.
Pose camera_world_pose(const Scene& scene);

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> depth;  // row-major; 0 marks an invalid (no hit) pixel

  float at(int u, int v) const { return depth[v * width + u]; }
  bool valid(int u, int v) const { return at(u, v) > 0.0f; }
};

// Per-pixel ray cast against the hole object (body minus cavity, constructive
// solid geometry).  Depth is the Euclidean hit distance along the ray; only
// the hole object renders (the peg sits in the camera's calibrated blind
// spot and the table is featureless).
DepthImage render_depth(const Scene& scene);

// Back-projects valid pixels to world-frame points.  Throws EmptyCloud when
// the image has no valid pixel.
PointCloud depth_to_cloud(const DepthImage& img, const Camera& camera,
                          const Pose& ee_pose);

struct PixelProjection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;  // Euclidean distance, matching render_depth
  bool in_front = false;
};

// Projects a camera-frame point; the inverse of the back-projection above.
PixelProjection project_point(const CameraIntrinsics& intr, const Vec3& p_cam);

// Render + back-project + optional Gaussian point noise + resample to
// exactly n_points (skipped when n_points <= 0).  Consumes rng for the
// resampling seed even when noise is off, keeping stream layout stable.
PointCloud capture_cloud(const Scene& scene, int n_points, double noise_sigma,
                         Rng& rng);

// Teleports the end-effector (camera and peg move rigidly).  Throws
// OutOfWorkspace when the target position leaves the workspace box.
Scene move_ee(const Scene& scene, const Pose& target);

struct InsertionOutcome {
  bool success = false;
  double lateral_offset = 0.0;  // ‖tip offset from hole axis‖ at start
  double tilt = 0.0;            // radians between peg axis and hole axis
  double depth_reached = 0.0;   // meters of tip travel below the mouth
};

// Straight-line insertion along the hole −z axis from peg_pose, stopping at
// the first containment violation.  Success means the tip reaches the cavity
// bottom with the peg cross-section inside the cavity the whole way
// (per-side lateral margin = half the diametral clearance; tilt consumes
// margin through the lever arm; square profiles additionally need the yaw
// to keep all four corners inside).
InsertionOutcome check_insertion(const Scene& scene, const Pose& peg_pose);

// Signed distance surrogate for the hole object's solid: exactly 0 on the
// surface, negative inside, positive outside (not the true Euclidean
// distance away from faces).  Used by surface-consistency checks.
double csg_distance(const HoleObject& hole, const Vec3& world_point);

// ---------------------------------------------------------------------------
// Files

// Human-readable key-value scene description; round-trips exactly.
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

// Depth image: small binary header (dimensions + intrinsics) and raw
// little-endian 4-byte floats, checksummed.
void save_depth(const std::string& path, const DepthImage& img,
                const CameraIntrinsics& intr);
DepthImage load_depth(const std::string& path, CameraIntrinsics* intr = nullptr);

}  // namespace peghole::sim

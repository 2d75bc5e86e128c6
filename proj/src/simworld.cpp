#include "peghole/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "peghole/binio.hpp"
#include "peghole/errors.hpp"

namespace peghole::sim {

namespace {

constexpr double kRayEps = 1e-9;
constexpr char kDepthMagic[8] = {'P', 'H', 'D', 'E', 'P', 'T', 'H', '1'};

// Ray-interval for a convex solid, empty when hit == false.
struct Interval {
  double t0 = 0.0, t1 = 0.0;
  bool hit = false;
};

// Clips [t0, t1] by the half-space a + t*b <= 0.
bool clip_halfspace(double a, double b, double& t0, double& t1) {
  if (std::abs(b) < 1e-15) return a <= 0.0;
  const double tc = -a / b;
  if (b > 0.0)
    t1 = std::min(t1, tc);
  else
    t0 = std::max(t0, tc);
  return t0 <= t1;
}

// Clips by an infinite circular cylinder |p_xy + t d_xy| <= r.
bool clip_cylinder(const Vec3& o, const Vec3& d, double r, double& t0,
                   double& t1) {
  const double A = d.x * d.x + d.y * d.y;
  const double B = 2.0 * (o.x * d.x + o.y * d.y);
  const double C = o.x * o.x + o.y * o.y - r * r;
  if (A < 1e-15) return C <= 0.0;  // ray parallel to the axis
  const double disc = B * B - 4.0 * A * C;
  if (disc < 0.0) return false;
  const double s = std::sqrt(disc);
  t0 = std::max(t0, (-B - s) / (2.0 * A));
  t1 = std::min(t1, (-B + s) / (2.0 * A));
  return t0 <= t1;
}

struct PentagonPlanes {
  // Outward unit normals and the apothem for a regular pentagon with one
  // vertex on +y.
  double nx[5], ny[5];
  double apothem;
};

PentagonPlanes pentagon_planes(double circumradius) {
  PentagonPlanes p;
  p.apothem = circumradius * std::cos(M_PI / 5.0);
  for (int k = 0; k < 5; ++k) {
    const double phi = M_PI / 2.0 + (2 * k + 1) * M_PI / 5.0;
    p.nx[k] = std::cos(phi);
    p.ny[k] = std::sin(phi);
  }
  return p;
}

// Ray vs body solid in the hole frame (footprint centered on the axis,
// z in [-height, 0]).
Interval intersect_body(const HoleObject& hole, const Vec3& o, const Vec3& d) {
  const BodyDims dims = body_dims(hole.body);
  Interval iv{-1e30, 1e30, false};
  if (!clip_halfspace(-(o.z + dims.height), -d.z, iv.t0, iv.t1)) return iv;
  if (!clip_halfspace(o.z, d.z, iv.t0, iv.t1)) return iv;
  switch (hole.body) {
    case BodyShape::kCuboid1:
    case BodyShape::kCuboid2:
      if (!clip_halfspace(o.x - dims.half_x, d.x, iv.t0, iv.t1)) return iv;
      if (!clip_halfspace(-o.x - dims.half_x, -d.x, iv.t0, iv.t1)) return iv;
      if (!clip_halfspace(o.y - dims.half_y, d.y, iv.t0, iv.t1)) return iv;
      if (!clip_halfspace(-o.y - dims.half_y, -d.y, iv.t0, iv.t1)) return iv;
      break;
    case BodyShape::kCylinder:
      if (!clip_cylinder(o, d, dims.radius, iv.t0, iv.t1)) return iv;
      break;
    case BodyShape::kPentagon: {
      const PentagonPlanes p = pentagon_planes(dims.circumradius);
      for (int k = 0; k < 5; ++k) {
        const double a = p.nx[k] * o.x + p.ny[k] * o.y - p.apothem;
        const double b = p.nx[k] * d.x + p.ny[k] * d.y;
        if (!clip_halfspace(a, b, iv.t0, iv.t1)) return iv;
      }
      break;
    }
  }
  iv.hit = iv.t0 <= iv.t1;
  return iv;
}

// Ray vs cavity solid (profile prism from the mouth plane down hole_depth).
Interval intersect_cavity(const HoleObject& hole, const Vec3& o,
                          const Vec3& d) {
  Interval iv{-1e30, 1e30, false};
  if (!clip_halfspace(-(o.z + hole.hole_depth), -d.z, iv.t0, iv.t1)) return iv;
  if (!clip_halfspace(o.z, d.z, iv.t0, iv.t1)) return iv;
  const double h = hole.profile.half_extent;
  if (hole.profile.kind == ProfileKind::kRound) {
    if (!clip_cylinder(o, d, h, iv.t0, iv.t1)) return iv;
  } else {
    if (!clip_halfspace(o.x - h, d.x, iv.t0, iv.t1)) return iv;
    if (!clip_halfspace(-o.x - h, -d.x, iv.t0, iv.t1)) return iv;
    if (!clip_halfspace(o.y - h, d.y, iv.t0, iv.t1)) return iv;
    if (!clip_halfspace(-o.y - h, -d.y, iv.t0, iv.t1)) return iv;
  }
  iv.hit = iv.t0 <= iv.t1;
  return iv;
}

// Nearest entry into body-minus-cavity along the ray, or -1 for a miss.
double raycast_hole(const HoleObject& hole, const Vec3& origin_w,
                    const Vec3& dir_w) {
  const Vec3 o = hole.pose.R.transpose() * (origin_w - hole.pose.t);
  const Vec3 d = hole.pose.R.transpose() * dir_w;
  const Interval body = intersect_body(hole, o, d);
  if (!body.hit || body.t1 < kRayEps) return -1.0;
  const Interval cav = intersect_cavity(hole, o, d);

  double starts[2], ends[2];
  int n = 0;
  if (!cav.hit || cav.t1 <= body.t0 || cav.t0 >= body.t1) {
    starts[n] = body.t0;
    ends[n++] = body.t1;
  } else {
    if (cav.t0 > body.t0) {
      starts[n] = body.t0;
      ends[n++] = cav.t0;
    }
    if (cav.t1 < body.t1) {
      starts[n] = cav.t1;
      ends[n++] = body.t1;
    }
  }
  for (int i = 0; i < n; ++i) {
    if (ends[i] - starts[i] < 1e-12) continue;  // tangency, no volume
    if (starts[i] >= kRayEps) return starts[i];
    if (ends[i] >= kRayEps) return starts[i] > 0.0 ? starts[i] : ends[i];
  }
  return -1.0;
}


std::string fmt_doubles(const double* v, int n) {
  std::string out;
  char buf[40];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

std::string fmt_pose(const Pose& p) {
  double v[12];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v[i * 3 + j] = p.R(i, j);
  v[9] = p.t.x;
  v[10] = p.t.y;
  v[11] = p.t.z;
  return fmt_doubles(v, 12);
}

std::vector<double> parse_doubles(const std::string& s, int expected) {
  std::istringstream in(s);
  std::vector<double> v;
  double x;
  while (in >> x) v.push_back(x);
  if (static_cast<int>(v.size()) != expected)
    throw CorruptFile("expected " + std::to_string(expected) +
                      " numbers, got " + std::to_string(v.size()));
  return v;
}

Pose parse_pose(const std::string& s) {
  const std::vector<double> v = parse_doubles(s, 12);
  Pose p;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.R.m[i][j] = v[i * 3 + j];
  p.t = {v[9], v[10], v[11]};
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction

std::string body_name(BodyShape s) {
  switch (s) {
    case BodyShape::kCuboid1: return "cuboid1";
    case BodyShape::kCuboid2: return "cuboid2";
    case BodyShape::kCylinder: return "cylinder";
    case BodyShape::kPentagon: return "pentagon";
  }
  return "cylinder";
}

BodyShape body_from_name(const std::string& s) {
  if (s == "cuboid1") return BodyShape::kCuboid1;
  if (s == "cuboid2") return BodyShape::kCuboid2;
  if (s == "cylinder") return BodyShape::kCylinder;
  if (s == "pentagon") return BodyShape::kPentagon;
  throw CorruptFile("unknown body shape: " + s);
}

BodyDims body_dims(BodyShape shape) {
  BodyDims d;
  switch (shape) {
    case BodyShape::kCuboid1:
      d.half_x = 0.065;
      d.half_y = 0.065;
      break;
    case BodyShape::kCuboid2:
      d.half_x = 0.050;
      d.half_y = 0.080;
      break;
    case BodyShape::kCylinder:
      d.radius = 0.08;
      break;
    case BodyShape::kPentagon:
      d.circumradius = 0.09;
      break;
  }
  return d;
}

Profile hole_profile(ProfileKind kind) {
  return {kind, 0.025};  // round radius or square half-side, both 25 mm
}

Peg matching_peg(ProfileKind kind) {
  return {kind, 0.023, 0.10};  // 4 mm diametral clearance
}

CameraIntrinsics default_intrinsics() {
  CameraIntrinsics c;
  c.width = 128;
  c.height = 128;
  c.fy = (c.height / 2.0) / std::tan(geom::deg2rad(60.0) / 2.0);
  c.fx = c.fy;
  c.cx = c.width / 2.0;
  c.cy = c.height / 2.0;
  return c;
}

Camera default_camera() {
  Camera cam;
  cam.intrinsics = default_intrinsics();
  // Camera +x along ee +x, viewing direction (+z) along ee -z.
  cam.mount.R = geom::RotationMatrix::from_columns(
      {1, 0, 0}, {0, -1, 0}, {0, 0, -1});
  cam.mount.t = {0, 0, 0.10};
  return cam;
}

// ---------------------------------------------------------------------------
// Scene sampling

Scene sample_scene(const TrialConfig& cfg, Rng& rng) {
  if (cfg.initial_error <= 0.0)
    throw CountOutOfRange("initial error must be positive");
  if (cfg.tilt_lo_deg < 0.0 || cfg.tilt_hi_deg > 50.0 ||
      cfg.tilt_lo_deg > cfg.tilt_hi_deg)
    throw CountOutOfRange("tilt range must lie within [0, 50] degrees");
  if (cfg.noise_sigma < 0.0) throw InvalidSigma("noise sigma must be >= 0");

  Scene scene;
  const ProfileKind profile =
      cfg.dof == DofMode::k3Dof ? ProfileKind::kRound : ProfileKind::kSquare;
  scene.peg = matching_peg(profile);
  scene.camera = default_camera();
  scene.hole.profile = hole_profile(profile);
  scene.hole.body = cfg.body ? *cfg.body
                             : static_cast<BodyShape>(rng.uniform_index(4));

  const Workspace& ws = scene.workspace;
  const double x = rng.uniform(-ws.table_half, ws.table_half);
  const double y = rng.uniform(-ws.table_half, ws.table_half);
  scene.hole.pose.t = {x, y, body_dims(scene.hole.body).height};

  if (cfg.dof == DofMode::k3Dof) {
    scene.hole.pose.R = geom::RotationMatrix::identity();
  } else {
    const double yaw_max = geom::deg2rad(cfg.yaw_max_deg);
    if (cfg.dof == DofMode::k4Dof) {
      scene.hole.pose.R =
          geom::euler_to_rotation({0, 0, rng.uniform(-yaw_max, yaw_max)});
    } else {
      const double lo = geom::deg2rad(cfg.tilt_lo_deg);
      const double hi = geom::deg2rad(cfg.tilt_hi_deg);
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        const geom::EulerAngles e{rng.uniform(-hi, hi), rng.uniform(-hi, hi),
                                  rng.uniform(-yaw_max, yaw_max)};
        const geom::RotationMatrix R = geom::euler_to_rotation(e);
        const double tilt = geom::angle_between(R.col_z(), {0, 0, 1});
        if (tilt >= lo - 1e-12 && tilt <= hi + 1e-12) {
          scene.hole.pose.R = R;
          ok = true;
        }
      }
      if (!ok)
        throw SamplingExhausted("no hole orientation satisfied the tilt range");
    }
  }

  // End-effector: upright, offset from the mouth by exactly initial_error
  // within an upward cone.
  const double theta = rng.uniform(0.0, geom::deg2rad(cfg.approach_cone_deg));
  const double phi = rng.uniform(0.0, 2.0 * M_PI);
  const Vec3 dir{std::sin(theta) * std::cos(phi),
                 std::sin(theta) * std::sin(phi), std::cos(theta)};
  scene.ee_pose.R = geom::RotationMatrix::identity();
  scene.ee_pose.t = scene.hole.pose.t + dir * cfg.initial_error;
  if (!scene.workspace.contains(scene.ee_pose.t))
    throw OutOfWorkspace("sampled end-effector start left the workspace");
  return scene;
}

Pose camera_world_pose(const Scene& scene) {
  return geom::compose(scene.ee_pose, scene.camera.mount);
}

// ---------------------------------------------------------------------------
// Rendering and back-projection

DepthImage render_depth(const Scene& scene) {
  const CameraIntrinsics& intr = scene.camera.intrinsics;
  const Pose cam = camera_world_pose(scene);
  DepthImage img;
  img.width = intr.width;
  img.height = intr.height;
  img.depth.assign(static_cast<std::size_t>(intr.width) * intr.height, 0.0f);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const Vec3 d_cam{(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0};
      const Vec3 dir = (cam.R * d_cam).normalized();
      const double t = raycast_hole(scene.hole, cam.t, dir);
      if (t > 0.0) img.depth[v * intr.width + u] = static_cast<float>(t);
    }
  }
  return img;
}

PointCloud depth_to_cloud(const DepthImage& img, const Camera& camera,
                          const Pose& ee_pose) {
  const CameraIntrinsics& intr = camera.intrinsics;
  if (img.width != intr.width || img.height != intr.height)
    throw ShapeMismatch("depth image size does not match camera intrinsics");
  const Pose cam = geom::compose(ee_pose, camera.mount);
  PointCloud out;
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const float d = img.at(u, v);
      if (d <= 0.0f) continue;
      const Vec3 dir_cam = Vec3{(u - intr.cx) / intr.fx,
                                (v - intr.cy) / intr.fy, 1.0}
                               .normalized();
      out.push_back(cam.R * (dir_cam * static_cast<double>(d)) + cam.t);
    }
  }
  if (out.empty()) throw EmptyCloud("depth image has no valid pixel");
  return out;
}

PixelProjection project_point(const CameraIntrinsics& intr, const Vec3& p_cam) {
  PixelProjection pp;
  pp.in_front = p_cam.z > 0.0;
  if (!pp.in_front) return pp;
  pp.u = intr.cx + intr.fx * p_cam.x / p_cam.z;
  pp.v = intr.cy + intr.fy * p_cam.y / p_cam.z;
  pp.depth = p_cam.norm();
  return pp;
}

PointCloud capture_cloud(const Scene& scene, int n_points, double noise_sigma,
                         Rng& rng) {
  PointCloud pts =
      depth_to_cloud(render_depth(scene), scene.camera, scene.ee_pose);
  const std::uint64_t resample_seed = rng.raw();
  if (noise_sigma > 0.0)
    pts = cloud::add_gaussian_noise(pts, noise_sigma, rng);
  if (n_points > 0) pts = cloud::resample_to(pts, n_points, resample_seed);
  return pts;
}

// ---------------------------------------------------------------------------
// Motion and insertion

Scene move_ee(const Scene& scene, const Pose& target) {
  if (!scene.workspace.contains(target.t))
    throw OutOfWorkspace("commanded pose leaves the workspace");
  Scene next = scene;
  next.ee_pose = target;
  return next;
}

InsertionOutcome check_insertion(const Scene& scene, const Pose& peg_pose) {
  const HoleObject& hole = scene.hole;
  const Peg& peg = scene.peg;
  const geom::RotationMatrix Rh_t = hole.pose.R.transpose();
  const Vec3 q = Rh_t * (peg_pose.t - hole.pose.t);  // tip, hole frame
  const geom::RotationMatrix Rp = Rh_t * peg_pose.R;  // peg frame in hole frame
  const Vec3 axis = Rp.col_z();

  InsertionOutcome out;
  out.lateral_offset = std::sqrt(q.x * q.x + q.y * q.y);
  out.tilt = geom::angle_between(axis, {0, 0, 1});

  if (axis.z < 1e-6) return out;  // peg not pointing downward into the hole
  const double depth = hole.hole_depth;
  if (q.z < -depth) return out;   // tip below the cavity bottom: invalid

  // The tip descends straight along -z from q.z to -depth.  Containment has
  // to hold at the cavity walls (heights z in [-depth, 0]) at every motion
  // instant.  All constraints are convex along each peg lateral edge (or the
  // axis), so checking the extreme slice configurations suffices: the tip
  // cross-section itself, and the mouth-plane slice at full insertion.
  const double h = hole.profile.half_extent;
  bool ok;
  if (peg.kind == ProfileKind::kRound) {
    // Conservative slice radius: a tilted cylinder cuts a horizontal plane
    // in an ellipse with semi-major r/|axis.z|.
    const double r_eff = peg.half_extent / axis.z;
    const double u_mouth = std::min(depth / axis.z, peg.length);
    const Vec3 mouth{q.x + u_mouth * axis.x, q.y + u_mouth * axis.y, 0.0};
    ok = out.lateral_offset + r_eff <= h &&
         std::sqrt(mouth.x * mouth.x + mouth.y * mouth.y) + r_eff <= h;
  } else {
    ok = true;
    for (int sx = -1; sx <= 1 && ok; sx += 2) {
      for (int sy = -1; sy <= 1 && ok; sy += 2) {
        const Vec3 corner = Rp * Vec3{sx * peg.half_extent,
                                      sy * peg.half_extent, 0.0};
        // Bottom end of this lateral edge: tip-face corner (its xy never
        // changes during the straight descent).
        const double bx = q.x + corner.x;
        const double by = q.y + corner.y;
        // Top end at the mouth plane when fully inserted.
        const double u =
            std::clamp((depth - corner.z) / axis.z, 0.0, peg.length);
        const double mx = bx + u * axis.x;
        const double my = by + u * axis.y;
        ok = std::abs(bx) <= h && std::abs(by) <= h && std::abs(mx) <= h &&
             std::abs(my) <= h;
      }
    }
  }
  if (ok) {
    out.success = true;
    out.depth_reached = depth;
    return out;
  }

  // Failed: report how deep the tip got before the first violation.
  auto clear_until = [&](double s) {
    // Containment of every wall slice while the tip is s below its start.
    const double submerged = s - std::max(q.z, 0.0);
    if (submerged <= 0.0) return true;
    if (peg.kind == ProfileKind::kRound) {
      const double r_eff = peg.half_extent / axis.z;
      const double u = std::min(submerged / axis.z, peg.length);
      const double mx = q.x + u * axis.x;
      const double my = q.y + u * axis.y;
      return out.lateral_offset + r_eff <= h &&
             std::sqrt(mx * mx + my * my) + r_eff <= h;
    }
    for (int sx = -1; sx <= 1; sx += 2) {
      for (int sy = -1; sy <= 1; sy += 2) {
        const Vec3 corner = Rp * Vec3{sx * peg.half_extent,
                                      sy * peg.half_extent, 0.0};
        const double bx = q.x + corner.x;
        const double by = q.y + corner.y;
        const double u =
            std::clamp((submerged - corner.z) / axis.z, 0.0, peg.length);
        const double mx = bx + u * axis.x;
        const double my = by + u * axis.y;
        if (std::abs(bx) > h || std::abs(by) > h || std::abs(mx) > h ||
            std::abs(my) > h)
          return false;
      }
    }
    return true;
  };
  const double s_end = q.z + depth;
  double lo = 0.0, hi = s_end;
  if (!clear_until(lo)) {
    out.depth_reached = 0.0;
    return out;
  }
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    (clear_until(mid) ? lo : hi) = mid;
  }
  out.depth_reached = std::max(0.0, lo - std::max(q.z, 0.0));
  return out;
}

// ---------------------------------------------------------------------------
// Signed-distance surrogate

double csg_distance(const HoleObject& hole, const Vec3& world_point) {
  const Vec3 p = hole.pose.R.transpose() * (world_point - hole.pose.t);
  const BodyDims dims = body_dims(hole.body);

  double sd_body;
  const double sd_z = std::max(p.z - 0.0, -(p.z + dims.height));
  switch (hole.body) {
    case BodyShape::kCuboid1:
    case BodyShape::kCuboid2:
      sd_body = std::max({std::abs(p.x) - dims.half_x,
                          std::abs(p.y) - dims.half_y, sd_z});
      break;
    case BodyShape::kCylinder:
      sd_body =
          std::max(std::sqrt(p.x * p.x + p.y * p.y) - dims.radius, sd_z);
      break;
    case BodyShape::kPentagon: {
      const PentagonPlanes pl = pentagon_planes(dims.circumradius);
      double m = -1e30;
      for (int k = 0; k < 5; ++k)
        m = std::max(m, pl.nx[k] * p.x + pl.ny[k] * p.y - pl.apothem);
      sd_body = std::max(m, sd_z);
      break;
    }
    default:
      sd_body = 1e30;
  }

  const double cav_z = std::max(p.z - 0.0, -(p.z + hole.hole_depth));
  const double he = hole.profile.half_extent;
  const double cav_xy =
      hole.profile.kind == ProfileKind::kRound
          ? std::sqrt(p.x * p.x + p.y * p.y) - he
          : std::max(std::abs(p.x) - he, std::abs(p.y) - he);
  const double sd_cavity = std::max(cav_xy, cav_z);

  return std::max(sd_body, -sd_cavity);
}

// ---------------------------------------------------------------------------
// Files

void save_scene(const std::string& path, const Scene& s) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  const CameraIntrinsics& c = s.camera.intrinsics;
  double cam_v[4] = {c.fx, c.fy, c.cx, c.cy};
  double peg_v[2] = {s.peg.half_extent, s.peg.length};
  double prof_v[2] = {s.hole.profile.half_extent, s.hole.hole_depth};
  double ws_v[7] = {s.workspace.lo.x, s.workspace.lo.y, s.workspace.lo.z,
                    s.workspace.hi.x, s.workspace.hi.y, s.workspace.hi.z,
                    s.workspace.table_half};
  f << "format = 1\n";
  f << "body = " << body_name(s.hole.body) << "\n";
  f << "profile = "
    << (s.hole.profile.kind == ProfileKind::kRound ? "round" : "square")
    << " " << fmt_doubles(prof_v, 2) << "\n";
  f << "hole_pose = " << fmt_pose(s.hole.pose) << "\n";
  f << "peg = "
    << (s.peg.kind == ProfileKind::kRound ? "round" : "square") << " "
    << fmt_doubles(peg_v, 2) << "\n";
  f << "ee_pose = " << fmt_pose(s.ee_pose) << "\n";
  f << "camera = " << c.width << " " << c.height << " " << fmt_doubles(cam_v, 4)
    << "\n";
  f << "mount_pose = " << fmt_pose(s.camera.mount) << "\n";
  f << "workspace = " << fmt_doubles(ws_v, 7) << "\n";
  if (!f) throw IoError("write failed: " + path);
}

Scene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CorruptFile("malformed scene line: " + line);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (kv.count(key)) throw CorruptFile("duplicate scene key: " + key);
    kv[key] = trim(line.substr(eq + 1));
  }
  const char* required[] = {"format",  "body",   "profile",
                            "hole_pose", "peg",  "ee_pose",
                            "camera",  "mount_pose", "workspace"};
  for (const auto& [key, value] : kv) {
    bool known = false;
    for (const char* r : required) known = known || key == r;
    if (!known) throw CorruptFile("unknown scene key: " + key);
  }
  for (const char* r : required)
    if (!kv.count(r)) throw CorruptFile(std::string("missing scene key: ") + r);
  if (kv["format"] != "1")
    throw VersionMismatch("unsupported scene format " + kv["format"]);

  Scene s;
  s.hole.body = body_from_name(kv["body"]);
  {
    std::istringstream in(kv["profile"]);
    std::string kind;
    in >> kind;
    std::string rest;
    std::getline(in, rest);
    const auto v = parse_doubles(rest, 2);
    if (kind != "round" && kind != "square")
      throw CorruptFile("unknown profile kind: " + kind);
    s.hole.profile.kind =
        kind == "round" ? ProfileKind::kRound : ProfileKind::kSquare;
    s.hole.profile.half_extent = v[0];
    s.hole.hole_depth = v[1];
  }
  s.hole.pose = parse_pose(kv["hole_pose"]);
  {
    std::istringstream in(kv["peg"]);
    std::string kind;
    in >> kind;
    std::string rest;
    std::getline(in, rest);
    const auto v = parse_doubles(rest, 2);
    if (kind != "round" && kind != "square")
      throw CorruptFile("unknown peg kind: " + kind);
    s.peg.kind = kind == "round" ? ProfileKind::kRound : ProfileKind::kSquare;
    s.peg.half_extent = v[0];
    s.peg.length = v[1];
  }
  s.ee_pose = parse_pose(kv["ee_pose"]);
  {
    std::istringstream in(kv["camera"]);
    int w, h;
    if (!(in >> w >> h)) throw CorruptFile("malformed camera line");
    std::string rest;
    std::getline(in, rest);
    const auto v = parse_doubles(rest, 4);
    if (w < 16 || h < 16) throw CorruptFile("camera image too small");
    s.camera.intrinsics = {w, h, v[0], v[1], v[2], v[3]};
    if (s.camera.intrinsics.fx <= 0.0 || s.camera.intrinsics.fy <= 0.0)
      throw CorruptFile("camera focal lengths must be positive");
  }
  s.camera.mount = parse_pose(kv["mount_pose"]);
  {
    const auto v = parse_doubles(kv["workspace"], 7);
    s.workspace.lo = {v[0], v[1], v[2]};
    s.workspace.hi = {v[3], v[4], v[5]};
    s.workspace.table_half = v[6];
  }
  if (!s.hole.pose.R.is_orthonormal(1e-6) || !s.ee_pose.R.is_orthonormal(1e-6))
    throw CorruptFile("scene rotation is not orthonormal");
  return s;
}

void save_depth(const std::string& path, const DepthImage& img,
                const CameraIntrinsics& intr) {
  if (img.width != intr.width || img.height != intr.height ||
      static_cast<int>(img.depth.size()) != img.width * img.height)
    throw ShapeMismatch("depth image does not match intrinsics");
  binio::Writer w;
  w.u32(static_cast<std::uint32_t>(img.width));
  w.u32(static_cast<std::uint32_t>(img.height));
  w.f64(intr.fx);
  w.f64(intr.fy);
  w.f64(intr.cx);
  w.f64(intr.cy);
  w.raw(img.depth.data(), img.depth.size() * sizeof(float));
  w.save(path, kDepthMagic);
}

DepthImage load_depth(const std::string& path, CameraIntrinsics* intr) {
  binio::Reader r(path, kDepthMagic);
  DepthImage img;
  img.width = static_cast<int>(r.u32());
  img.height = static_cast<int>(r.u32());
  if (img.width < 1 || img.height < 1 || img.width > 65536 ||
      img.height > 65536)
    throw CorruptFile("depth image dimensions corrupt");
  CameraIntrinsics c;
  c.width = img.width;
  c.height = img.height;
  c.fx = r.f64();
  c.fy = r.f64();
  c.cx = r.f64();
  c.cy = r.f64();
  img.depth.resize(static_cast<std::size_t>(img.width) * img.height);
  r.raw(img.depth.data(), img.depth.size() * sizeof(float));
  if (intr) *intr = c;
  return img;
}

}  // namespace peghole::sim

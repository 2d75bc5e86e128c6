#include "peghole/datagen.hpp"

#include <cmath>
#include <fstream>

#include "peghole/binio.hpp"
#include "peghole/errors.hpp"

namespace peghole::datagen {

namespace {

constexpr char kDatasetMagic[8] = {'P', 'H', 'D', 'A', 'T', 'A', '0', '1'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint32_t kKindCoarse = 1;
constexpr std::uint32_t kKindFine = 2;

void put_vec3(binio::Writer& w, const Vec3& v) {
  w.f64(v.x);
  w.f64(v.y);
  w.f64(v.z);
}

Vec3 get_vec3(binio::Reader& r) {
  Vec3 v;
  v.x = r.f64();
  v.y = r.f64();
  v.z = r.f64();
  return v;
}

void put_pose(binio::Writer& w, const Pose& p) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) w.f64(p.R(i, j));
  put_vec3(w, p.t);
}

Pose get_pose(binio::Reader& r) {
  Pose p;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.R.m[i][j] = r.f64();
  p.t = get_vec3(r);
  return p;
}

// Pre-insertion target: hole pose lifted by the standoff along its axis.
Pose standoff_target(const Pose& hole_pose, double standoff) {
  return {hole_pose.R, hole_pose.t + hole_pose.R.col_z() * standoff};
}

}  // namespace

geom::KeypointTriple gt_keypoints(const Pose& hole_pose) {
  geom::KeypointTriple k;
  k.k1 = hole_pose.t;
  k.k2 = hole_pose.t + hole_pose.R.col_x() * kKeypointOffset;
  k.k3 = hole_pose.t + hole_pose.R.col_z() * kKeypointOffset;
  return k;
}

std::vector<CoarseRecord> gen_coarse(int m, const CoarseGenConfig& cfg,
                                     Rng& rng) {
  if (m < 1) throw CountOutOfRange("record count must be >= 1");
  if (cfg.sigma <= 0.0) throw InvalidSigma("confidence sigma must be > 0");
  std::vector<CoarseRecord> out;
  out.reserve(m);
  for (int rec = 0; rec < m; ++rec) {
    const sim::Scene scene = sim::sample_scene(cfg.trial, rng);
    PointCloud pts =
        sim::capture_cloud(scene, cfg.n_points, cfg.train_noise_sigma, rng);
    geom::KeypointTriple kp = gt_keypoints(scene.hole.pose);

    if (cfg.augment) {
      cloud::AugmentSpec spec = cfg.augment_spec;
      spec.confidence_sigma = cfg.sigma;
      spec.seed = rng.raw();
      cloud::AugmentResult aug =
          cloud::augment(pts, scene.hole.pose.t, kp, spec);
      pts = std::move(aug.cloud);
      kp = aug.keypoints;
    }

    CoarseRecord r;
    r.hole_pose = geom::pose_from_keypoints(kp);
    r.gt_offsets.resize(pts.size());
    r.gt_map.resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      r.gt_offsets[i] = {kp.k1 - pts[i], kp.k2 - pts[i], kp.k3 - pts[i]};
      r.gt_map[i] = geom::gaussian_confidence(pts[i], kp.k1, cfg.sigma);
    }
    r.cloud = std::move(pts);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<FineRecord> gen_fine(int l, const FineGenConfig& cfg, Rng& rng) {
  if (l < 1) throw CountOutOfRange("record count must be >= 1");
  if (cfg.max_dt < 0.0 || cfg.max_dr_deg < 0.0)
    throw CountOutOfRange("perturbation envelope must be >= 0");
  std::vector<FineRecord> out;
  out.reserve(l);
  const double max_dr = geom::deg2rad(cfg.max_dr_deg);
  for (int rec = 0; rec < l; ++rec) {
    const sim::Scene scene = sim::sample_scene(cfg.trial, rng);
    const Pose target = standoff_target(scene.hole.pose, cfg.standoff);

    const Vec3 dt{rng.uniform(-cfg.max_dt, cfg.max_dt),
                  rng.uniform(-cfg.max_dt, cfg.max_dt),
                  rng.uniform(-cfg.max_dt, cfg.max_dt)};
    const geom::EulerAngles dr{rng.uniform(-max_dr, max_dr),
                               rng.uniform(-max_dr, max_dr),
                               rng.uniform(-max_dr, max_dr)};

    // Perturbed pose is the exact inverse of the servo update, so applying
    // (dt, dr) from it reaches the target to machine precision.
    const geom::RotationMatrix dR = geom::euler_to_rotation(dr);
    Pose perturbed;
    perturbed.R = dR.transpose() * target.R;
    perturbed.t = target.t - dt;

    const sim::Scene at_perturbed = sim::move_ee(scene, perturbed);
    PointCloud raw =
        sim::capture_cloud(at_perturbed, 0, cfg.train_noise_sigma, rng);
    PointCloud crop = cloud::crop_near(raw, perturbed.t, cfg.crop_radius,
                                       cfg.n_points, rng.raw());

    FineRecord r;
    r.cloud.reserve(crop.size());
    const geom::RotationMatrix Rt = perturbed.R.transpose();
    for (const Vec3& p : crop) r.cloud.push_back(Rt * (p - perturbed.t));
    r.gt_delta_t = dt;
    r.gt_delta_r = dr;
    r.ee_pose = perturbed;
    r.target_pose = target;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<net::CoarseItem> to_coarse_items(
    const std::vector<CoarseRecord>& records) {
  std::vector<net::CoarseItem> items;
  items.reserve(records.size());
  for (const CoarseRecord& r : records)
    items.push_back({&r.cloud, &r.gt_offsets, &r.gt_map});
  return items;
}

std::vector<net::FineItem> to_fine_items(
    const std::vector<FineRecord>& records) {
  std::vector<net::FineItem> items;
  items.reserve(records.size());
  for (const FineRecord& r : records) {
    net::FineItem item;
    item.cloud = r.cloud;
    // World-frame labels -> the end-effector frame the network predicts in.
    const geom::RotationMatrix Rt = r.ee_pose.R.transpose();
    item.delta_t = Rt * r.gt_delta_t;
    const geom::RotationMatrix dR_rel =
        Rt * geom::euler_to_rotation(r.gt_delta_r) * r.ee_pose.R;
    const geom::EulerAngles e = geom::rotation_to_euler(dR_rel);
    item.delta_r = {e.x, e.y, e.z};
    items.push_back(std::move(item));
  }
  return items;
}

// ---------------------------------------------------------------------------
// Serialization

void save_dataset(const std::string& path,
                  const std::vector<CoarseRecord>& records) {
  if (records.empty()) throw CountOutOfRange("refusing to save empty dataset");
  const std::size_t n = records[0].cloud.size();
  binio::Writer w;
  w.u32(kDatasetVersion);
  w.u32(kKindCoarse);
  w.u64(records.size());
  w.u32(static_cast<std::uint32_t>(n));
  for (const CoarseRecord& r : records) {
    if (r.cloud.size() != n || r.gt_offsets.size() != n || r.gt_map.size() != n)
      throw ShapeMismatch("coarse record sizes are inconsistent");
    for (const Vec3& p : r.cloud) put_vec3(w, p);
    for (const auto& o : r.gt_offsets)
      for (const Vec3& v : o) put_vec3(w, v);
    for (double x : r.gt_map) w.f64(x);
    put_pose(w, r.hole_pose);
  }
  w.save(path, kDatasetMagic);
}

void save_dataset(const std::string& path,
                  const std::vector<FineRecord>& records) {
  if (records.empty()) throw CountOutOfRange("refusing to save empty dataset");
  const std::size_t n = records[0].cloud.size();
  binio::Writer w;
  w.u32(kDatasetVersion);
  w.u32(kKindFine);
  w.u64(records.size());
  w.u32(static_cast<std::uint32_t>(n));
  for (const FineRecord& r : records) {
    if (r.cloud.size() != n)
      throw ShapeMismatch("fine record sizes are inconsistent");
    for (const Vec3& p : r.cloud) put_vec3(w, p);
    put_vec3(w, r.gt_delta_t);
    w.f64(r.gt_delta_r.x);
    w.f64(r.gt_delta_r.y);
    w.f64(r.gt_delta_r.z);
    put_pose(w, r.ee_pose);
    put_pose(w, r.target_pose);
  }
  w.save(path, kDatasetMagic);
}

namespace {

binio::Reader open_dataset(const std::string& path, std::uint32_t kind,
                           std::uint64_t& count, std::uint32_t& n) {
  binio::Reader r(path, kDatasetMagic);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw VersionMismatch("unsupported dataset version " +
                          std::to_string(version));
  const std::uint32_t k = r.u32();
  if (k != kind) throw CorruptFile("dataset holds a different record kind");
  count = r.u64();
  n = r.u32();
  if (count == 0 || count > (1ULL << 32) || n == 0 || n > (1u << 24))
    throw CorruptFile("dataset header counts corrupt");
  return r;
}

}  // namespace

std::vector<CoarseRecord> load_coarse_dataset(const std::string& path) {
  std::uint64_t count;
  std::uint32_t n;
  binio::Reader r = open_dataset(path, kKindCoarse, count, n);
  std::vector<CoarseRecord> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CoarseRecord rec;
    rec.cloud.resize(n);
    rec.gt_offsets.resize(n);
    rec.gt_map.resize(n);
    for (auto& p : rec.cloud) p = get_vec3(r);
    for (auto& o : rec.gt_offsets)
      for (Vec3& v : o) v = get_vec3(r);
    for (double& x : rec.gt_map) x = r.f64();
    rec.hole_pose = get_pose(r);
    out.push_back(std::move(rec));
  }
  if (!r.exhausted()) throw CorruptFile("trailing bytes in dataset");
  return out;
}

std::vector<FineRecord> load_fine_dataset(const std::string& path) {
  std::uint64_t count;
  std::uint32_t n;
  binio::Reader r = open_dataset(path, kKindFine, count, n);
  std::vector<FineRecord> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FineRecord rec;
    rec.cloud.resize(n);
    for (auto& p : rec.cloud) p = get_vec3(r);
    rec.gt_delta_t = get_vec3(r);
    rec.gt_delta_r.x = r.f64();
    rec.gt_delta_r.y = r.f64();
    rec.gt_delta_r.z = r.f64();
    rec.ee_pose = get_pose(r);
    rec.target_pose = get_pose(r);
    out.push_back(std::move(rec));
  }
  if (!r.exhausted()) throw CorruptFile("trailing bytes in dataset");
  return out;
}

void write_manifest(
    const std::string& dataset_path,
    const std::vector<std::pair<std::string, std::string>>& entries) {
  const std::string path = dataset_path + ".manifest";
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& [key, value] : entries) f << key << " = " << value << "\n";
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace peghole::datagen

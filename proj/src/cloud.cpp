#include "peghole/cloud.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "peghole/errors.hpp"

namespace peghole::cloud {

std::vector<int> farthest_point_sample_from(const PointCloud& cloud, int m,
                                            int start_index) {
  const int n = static_cast<int>(cloud.size());
  if (n == 0) throw EmptyCloud("farthest_point_sample: empty cloud");
  if (m < 1 || m > n)
    throw CountOutOfRange("farthest_point_sample: m must be in [1, N]");
  if (start_index < 0 || start_index >= n)
    throw CountOutOfRange("farthest_point_sample: bad start index");

  std::vector<int> picked;
  picked.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  int cur = start_index;
  picked.push_back(cur);
  for (int step = 1; step < m; ++step) {
    // Fold the latest pick into the min-distance field, then take the
    // farthest remaining point (ties -> smallest index).
    const Vec3& p = cloud[cur];
    int best = -1;
    double best_d2 = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d2 = std::min(min_d2[i], (cloud[i] - p).norm2());
      min_d2[i] = d2;
      if (d2 > best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    // best may be an already-picked point only when every remaining distance
    // is zero (duplicate-only clouds); fall back to the smallest unpicked
    // index to keep the result distinct.
    if (min_d2[best] == 0.0) {
      std::vector<char> taken(n, 0);
      for (int idx : picked) taken[idx] = 1;
      for (int i = 0; i < n; ++i)
        if (!taken[i]) { best = i; break; }
    }
    min_d2[best] = 0.0;
    picked.push_back(best);
    cur = best;
  }
  return picked;
}

std::vector<int> farthest_point_sample(const PointCloud& cloud, int m,
                                       std::uint64_t seed) {
  if (cloud.empty()) throw EmptyCloud("farthest_point_sample: empty cloud");
  const int start = static_cast<int>(seed % cloud.size());
  return farthest_point_sample_from(cloud, m, start);
}

int lexicographic_min_index(const PointCloud& cloud) {
  if (cloud.empty()) throw EmptyCloud("lexicographic_min_index: empty cloud");
  int best = 0;
  for (int i = 1; i < static_cast<int>(cloud.size()); ++i) {
    const Vec3& a = cloud[i];
    const Vec3& b = cloud[best];
    if (a.x != b.x ? a.x < b.x : (a.y != b.y ? a.y < b.y : a.z < b.z))
      best = i;
  }
  return best;
}

namespace {

// Ordering used for neighbor selection: distance first, then lexicographic
// point order, then index.  Permutation-stable for distinct points.
struct NeighborOrder {
  const PointCloud& cloud;
  bool operator()(const std::pair<double, int>& a,
                  const std::pair<double, int>& b) const {
    if (a.first != b.first) return a.first < b.first;
    const Vec3& pa = cloud[a.second];
    const Vec3& pb = cloud[b.second];
    if (pa.x != pb.x) return pa.x < pb.x;
    if (pa.y != pb.y) return pa.y < pb.y;
    if (pa.z != pb.z) return pa.z < pb.z;
    return a.second < b.second;
  }
};

}  // namespace

std::vector<int> ball_query(const PointCloud& cloud, const Vec3& center,
                            double radius, int max_k) {
  if (cloud.empty()) throw EmptyCloud("ball_query: empty cloud");
  if (max_k < 1) throw CountOutOfRange("ball_query: max_k must be >= 1");
  if (!(radius > 0.0)) throw CountOutOfRange("ball_query: radius must be > 0");

  const double r2 = radius * radius;
  std::vector<std::pair<double, int>> in_range;
  int nearest = 0;
  double nearest_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    const double d2 = (cloud[i] - center).norm2();
    if (d2 <= r2) in_range.emplace_back(d2, i);
    if (d2 < nearest_d2 ||
        (d2 == nearest_d2 &&
         NeighborOrder{cloud}({d2, i}, {nearest_d2, nearest}))) {
      nearest_d2 = d2;
      nearest = i;
    }
  }
  if (in_range.empty()) return {nearest};

  std::sort(in_range.begin(), in_range.end(), NeighborOrder{cloud});
  if (static_cast<int>(in_range.size()) > max_k) in_range.resize(max_k);
  std::vector<int> idx(in_range.size());
  for (size_t i = 0; i < in_range.size(); ++i) idx[i] = in_range[i].second;
  return idx;
}

PointCloud crop_near(const PointCloud& cloud, const Vec3& center,
                     double radius, int n_out, std::uint64_t seed) {
  if (n_out < 1) throw CountOutOfRange("crop_near: n_out must be >= 1");
  if (!(radius > 0.0)) throw CountOutOfRange("crop_near: radius must be > 0");
  const double r2 = radius * radius;
  std::vector<int> in_range;
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i)
    if ((cloud[i] - center).norm2() <= r2) in_range.push_back(i);
  if (in_range.empty()) throw EmptyCrop("crop_near: no point within radius");

  const int k = static_cast<int>(in_range.size());
  PointCloud out;
  out.reserve(n_out);
  if (k == n_out) {
    for (int i : in_range) out.push_back(cloud[i]);
    return out;
  }
  Rng rng(seed);
  if (k > n_out) {
    // Seeded partial Fisher-Yates: first n_out entries are a uniform subset.
    std::vector<int> idx = in_range;
    for (int i = 0; i < n_out; ++i) {
      const int j = i + static_cast<int>(rng.uniform_index(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    for (int i = 0; i < n_out; ++i) out.push_back(cloud[idx[i]]);
  } else {
    for (int i : in_range) out.push_back(cloud[i]);
    for (int i = k; i < n_out; ++i)
      out.push_back(cloud[in_range[rng.uniform_index(k)]]);
  }
  return out;
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, Rng& rng) {
  if (sigma < 0.0) throw InvalidSigma("add_gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return cloud;
  PointCloud out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud)
    out.push_back({p.x + rng.normal(0.0, sigma), p.y + rng.normal(0.0, sigma),
                   p.z + rng.normal(0.0, sigma)});
  return out;
}

std::array<Vec3, 3> weighted_keypoint_aggregate(
    const KeypointCandidates& candidates, const ConfidenceMap& weights) {
  if (candidates.empty()) throw EmptyCloud("aggregate: no candidates");
  if (candidates.size() != weights.size())
    throw ShapeMismatch("aggregate: candidate/weight count mismatch");

  double wsum = 0.0;
  for (double w : weights) wsum += w;
  const bool uniform = wsum < 1e-9;
  const double denom = uniform ? static_cast<double>(candidates.size()) : wsum;

  std::array<Vec3, 3> out{};
  for (size_t i = 0; i < candidates.size(); ++i) {
    const double w = uniform ? 1.0 : weights[i];
    for (int j = 0; j < 3; ++j) out[j] += candidates[i][j] * w;
  }
  for (int j = 0; j < 3; ++j) out[j] = out[j] / denom;
  return out;
}

AugmentResult augment(const PointCloud& cloud, const Vec3& hole_center,
                      const geom::KeypointTriple& keypoints,
                      const AugmentSpec& spec) {
  if (!(spec.hole_exclusion_radius > 0.0))
    throw CountOutOfRange("augment: exclusion radius must be > 0");
  if (spec.scale_lo > spec.scale_hi || spec.rotation_lo > spec.rotation_hi)
    throw CountOutOfRange("augment: empty parameter range");

  Rng rng(spec.seed);
  const bool do_scale = spec.mode != AugmentMode::kRotate;
  const bool do_rotate = spec.mode != AugmentMode::kScale;
  const double sx = do_scale ? rng.uniform(spec.scale_lo, spec.scale_hi) : 1.0;
  const double sy = do_scale ? rng.uniform(spec.scale_lo, spec.scale_hi) : 1.0;
  const double theta =
      do_rotate ? rng.uniform(spec.rotation_lo, spec.rotation_hi) : 0.0;

  // The object frame is encoded by the labels themselves.
  const geom::RotationMatrix r_obj = geom::rotation_from_keypoints(keypoints);
  const geom::RotationMatrix r_obj_t = r_obj.transpose();
  const geom::RotationMatrix rot_z =
      geom::rotation_about_axis(Vec3{0, 0, 1}, theta);

  const double excl2 = spec.hole_exclusion_radius * spec.hole_exclusion_radius;
  auto transform_point = [&](const Vec3& p) {
    Vec3 local = r_obj_t * (p - hole_center);
    local.x *= sx;
    local.y *= sy;
    local = rot_z * local;
    return hole_center + r_obj * local;
  };

  AugmentResult res;
  res.cloud.reserve(cloud.size());
  for (const Vec3& p : cloud) {
    const bool excluded = (p - hole_center).norm2() <= excl2;
    res.cloud.push_back(excluded ? p : transform_point(p));
  }

  // k1 and k3 lie on the rotation axis; only k2 moves, and only by rotation
  // (the markers sit inside the exclusion zone, so scaling never touches them).
  res.keypoints = keypoints;
  res.keypoints.k2 =
      hole_center + r_obj * (rot_z * (r_obj_t * (keypoints.k2 - hole_center)));

  res.map.resize(res.cloud.size());
  for (size_t i = 0; i < res.cloud.size(); ++i)
    res.map[i] =
        geom::gaussian_confidence(res.cloud[i], hole_center, spec.confidence_sigma);
  return res;
}

PointCloud resample_to(const PointCloud& cloud, int n, std::uint64_t seed) {
  if (cloud.empty()) throw EmptyCloud("resample_to: empty cloud");
  if (n < 1) throw CountOutOfRange("resample_to: n must be >= 1");
  const int sz = static_cast<int>(cloud.size());
  PointCloud out;
  out.reserve(n);
  if (sz >= n) {
    for (int i : farthest_point_sample(cloud, n, seed)) out.push_back(cloud[i]);
  } else {
    out = cloud;
    Rng rng(seed);
    for (int i = sz; i < n; ++i) out.push_back(cloud[rng.uniform_index(sz)]);
  }
  return out;
}

Vec3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw EmptyCloud("centroid: empty cloud");
  Vec3 c;
  for (const Vec3& p : cloud) c += p;
  return c / static_cast<double>(cloud.size());
}

}  // namespace peghole::cloud

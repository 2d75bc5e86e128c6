#include "peghole/cloud.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "peghole/rng.hpp"

using namespace peghole;
using cloud::ConfidenceMap;
using cloud::KeypointCandidates;
using cloud::PointCloud;
using geom::Vec3;

namespace {

PointCloud random_cloud(int n, Rng& rng, double extent = 1.0) {
  PointCloud pts(n);
  for (Vec3& p : pts)
    p = {rng.uniform(-extent, extent), rng.uniform(-extent, extent),
         rng.uniform(-extent, extent)};
  return pts;
}

bool near(const Vec3& a, const Vec3& b, double tol = 1e-12) {
  return (a - b).norm() <= tol;
}

bool same_clouds(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].x != b[i].x || a[i].y != b[i].y || a[i].z != b[i].z) return false;
  return true;
}

}  // namespace

TEST_CASE("farthest-point sampling covers the edge cases exactly") {
  const PointCloud square{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};

  SUBCASE("m = N returns every index once") {
    const auto idx = cloud::farthest_point_sample(square, 4, 9);
    std::set<int> s(idx.begin(), idx.end());
    CHECK(s == std::set<int>{0, 1, 2, 3});
  }

  SUBCASE("m = 1 returns only the seeded start") {
    const auto idx = cloud::farthest_point_sample(square, 1, 6);
    REQUIRE(idx.size() == 1);
    CHECK(idx[0] == 6 % 4);
  }

  SUBCASE("from a square corner the second pick is the opposite corner") {
    const auto idx = cloud::farthest_point_sample_from(square, 2, 0);
    REQUIRE(idx.size() == 2);
    CHECK(idx[0] == 0);   // (0,0)
    CHECK(idx[1] == 3);   // (1,1), the unique farthest point
  }

  SUBCASE("count bounds are enforced") {
    CHECK_THROWS_AS(cloud::farthest_point_sample(square, 0, 1),
                    CountOutOfRange);
    CHECK_THROWS_AS(cloud::farthest_point_sample(square, 5, 1),
                    CountOutOfRange);
    CHECK_THROWS_AS(cloud::farthest_point_sample({}, 1, 1), EmptyCloud);
  }
}

TEST_CASE("farthest-point sampling is greedy, distinct, and deterministic") {
  Rng rng(21);
  const PointCloud pts = random_cloud(120, rng);
  const auto idx = cloud::farthest_point_sample(pts, 30, 5);

  std::set<int> seen(idx.begin(), idx.end());
  CHECK(seen.size() == idx.size());

  // Greedy invariant: each pick is at least as far from the selected set as
  // every point chosen after it (min-distances are non-increasing).
  auto min_dist_to_prefix = [&](int upto, const Vec3& p) {
    double best = 1e300;
    for (int i = 0; i < upto; ++i)
      best = std::min(best, (pts[idx[i]] - p).norm2());
    return best;
  };
  for (size_t i = 2; i < idx.size(); ++i) {
    const double cur = min_dist_to_prefix(i - 1, pts[idx[i - 1]]);
    const double nxt = min_dist_to_prefix(i - 1, pts[idx[i]]);
    CHECK(cur >= nxt - 1e-12);
  }

  CHECK(cloud::farthest_point_sample(pts, 30, 5) == idx);
  CHECK(cloud::farthest_point_sample(pts, 30, 6) != idx);
}

TEST_CASE("ball query agrees with a brute-force scan") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 16 + static_cast<int>(rng.uniform_index(240));
    const PointCloud pts = random_cloud(n, rng);
    const Vec3 center = random_cloud(1, rng)[0];
    const double radius = rng.uniform(0.2, 0.9);
    const int max_k = 1 + static_cast<int>(rng.uniform_index(24));

    const auto got = cloud::ball_query(pts, center, radius, max_k);

    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    std::stable_sort(all.begin(), all.end(), [&](int a, int b) {
      return (pts[a] - center).norm2() < (pts[b] - center).norm2();
    });
    std::vector<int> expect;
    for (int i : all) {
      if ((pts[i] - center).norm() <= radius) expect.push_back(i);
      if (static_cast<int>(expect.size()) == max_k) break;
    }
    if (expect.empty()) expect.push_back(all[0]);  // nearest substituted

    REQUIRE(got.size() == expect.size());
    for (size_t i = 0; i < got.size(); ++i) {
      // Equal-distance neighbors may legally swap; compare distances.
      CHECK((pts[got[i]] - center).norm() ==
            doctest::Approx((pts[expect[i]] - center).norm()).epsilon(1e-12));
    }
  }
}

TEST_CASE("ball query respects cluster separation and never comes back empty") {
  Rng rng(23);
  PointCloud pts;
  for (int i = 0; i < 40; ++i) pts.push_back(random_cloud(1, rng)[0] * 0.05);
  for (int i = 0; i < 40; ++i)
    pts.push_back(Vec3{1, 0, 0} + random_cloud(1, rng)[0] * 0.05);

  const auto near_origin = cloud::ball_query(pts, {0, 0, 0}, 0.1, 64);
  for (int i : near_origin) CHECK(i < 40);
  CHECK(!near_origin.empty());

  const auto far = cloud::ball_query(pts, {50, 0, 0}, 0.1, 8);
  REQUIRE(far.size() == 1);  // nothing in range: single nearest substituted
  CHECK(far[0] >= 40);

  CHECK_THROWS_AS(cloud::ball_query({}, {0, 0, 0}, 1.0, 4), EmptyCloud);

  // A cloud point used as its own center comes back first at distance zero.
  const auto self = cloud::ball_query(pts, pts[7], 0.2, 4);
  CHECK((pts[self[0]] - pts[7]).norm() == 0.0);
}

TEST_CASE("crop_near keeps membership and resamples to the requested size") {
  Rng rng(24);
  const PointCloud pts = random_cloud(200, rng);
  const Vec3 center{0.1, 0.0, -0.2};
  const double radius = 0.5;

  std::set<int> inside;
  for (int i = 0; i < 200; ++i)
    if ((pts[i] - center).norm() <= radius) inside.insert(i);
  REQUIRE(inside.size() > 4);

  auto is_member = [&](const Vec3& p) {
    for (int i : inside)
      if (near(pts[i], p)) return true;
    return false;
  };

  SUBCASE("downsampling picks distinct in-radius points") {
    const int n_out = static_cast<int>(inside.size()) / 2;
    const PointCloud crop = cloud::crop_near(pts, center, radius, n_out, 3);
    REQUIRE(static_cast<int>(crop.size()) == n_out);
    for (const Vec3& p : crop) CHECK(is_member(p));
  }

  SUBCASE("padding repeats in-radius points to reach the target size") {
    const int n_out = static_cast<int>(inside.size()) * 3;
    const PointCloud crop = cloud::crop_near(pts, center, radius, n_out, 3);
    REQUIRE(static_cast<int>(crop.size()) == n_out);
    for (const Vec3& p : crop) CHECK(is_member(p));
  }

  SUBCASE("same seed reproduces the crop") {
    CHECK(same_clouds(cloud::crop_near(pts, center, radius, 16, 3),
                      cloud::crop_near(pts, center, radius, 16, 3)));
  }

  SUBCASE("bad arguments are rejected") {
    CHECK_THROWS_AS(cloud::crop_near(pts, {9, 9, 9}, 0.1, 8, 1), EmptyCrop);
    CHECK_THROWS_AS(cloud::crop_near(pts, center, radius, 0, 1),
                    CountOutOfRange);
    CHECK_THROWS_AS(cloud::crop_near(pts, center, 0.0, 8, 1),
                    CountOutOfRange);
  }
}

TEST_CASE("gaussian noise is exact at sigma zero and calibrated otherwise") {
  Rng rng(25);
  const PointCloud pts = random_cloud(64, rng);

  SUBCASE("sigma = 0 is the identity") {
    Rng r2(1);
    CHECK(same_clouds(cloud::add_gaussian_noise(pts, 0.0, r2), pts));
  }

  SUBCASE("negative sigma is rejected") {
    Rng r2(1);
    CHECK_THROWS_AS(cloud::add_gaussian_noise(pts, -1e-3, r2), InvalidSigma);
  }

  SUBCASE("sample deviation matches sigma within 5 percent") {
    const PointCloud big(100000, Vec3{0, 0, 0});
    Rng r2(77);
    const PointCloud noisy = cloud::add_gaussian_noise(big, 1e-3, r2);
    double sum2 = 0.0;
    for (const Vec3& p : noisy) sum2 += p.norm2();
    const double std_per_axis =
        std::sqrt(sum2 / (3.0 * static_cast<double>(big.size())));
    CHECK(std_per_axis == doctest::Approx(1e-3).epsilon(0.05));
  }

  SUBCASE("same seed gives the identical cloud") {
    Rng a(5), b(5);
    CHECK(same_clouds(cloud::add_gaussian_noise(pts, 1e-3, a),
                      cloud::add_gaussian_noise(pts, 1e-3, b)));
  }
}

TEST_CASE("weighted keypoint aggregation implements the weighted mean") {
  const Vec3 a{0, 0, 0}, b{4, 0, 0};
  KeypointCandidates cands{{a, a, a}, {b, b, b}};

  SUBCASE("weights 1 and 3 put the result three quarters of the way") {
    const auto k = cloud::weighted_keypoint_aggregate(cands, {1.0, 3.0});
    for (int j = 0; j < 3; ++j) CHECK(near(k[j], {3, 0, 0}));
  }

  SUBCASE("uniform weights reduce to the mean") {
    const auto k = cloud::weighted_keypoint_aggregate(cands, {0.5, 0.5});
    for (int j = 0; j < 3; ++j) CHECK(near(k[j], {2, 0, 0}));
  }

  SUBCASE("a one-hot weight selects that candidate exactly") {
    const auto k = cloud::weighted_keypoint_aggregate(cands, {0.0, 1.0});
    for (int j = 0; j < 3; ++j) CHECK(near(k[j], b));
  }

  SUBCASE("rescaling all weights changes nothing") {
    const auto k1 = cloud::weighted_keypoint_aggregate(cands, {0.2, 0.6});
    const auto k2 = cloud::weighted_keypoint_aggregate(cands, {0.1, 0.3});
    for (int j = 0; j < 3; ++j) CHECK(near(k1[j], k2[j], 1e-12));
  }

  SUBCASE("vanishing total weight falls back to the uniform mean") {
    const auto k = cloud::weighted_keypoint_aggregate(cands, {1e-12, 1e-12});
    for (int j = 0; j < 3; ++j) CHECK(near(k[j], {2, 0, 0}));
  }

  SUBCASE("shape and emptiness are validated") {
    CHECK_THROWS_AS(cloud::weighted_keypoint_aggregate(cands, {1.0}),
                    ShapeMismatch);
    CHECK_THROWS_AS(cloud::weighted_keypoint_aggregate({}, {}), EmptyCloud);
  }
}

TEST_CASE("contour augmentation transforms geometry and labels together") {
  Rng rng(26);
  // Points spread around a hole at the origin, well outside the exclusion
  // ball, plus a tight cluster inside it.
  PointCloud pts;
  for (int i = 0; i < 60; ++i) {
    const double ang = rng.uniform(0, 2 * M_PI);
    const double r = rng.uniform(0.08, 0.2);
    pts.push_back({r * std::cos(ang), r * std::sin(ang),
                   rng.uniform(0.0, 0.02)});
  }
  for (int i = 0; i < 20; ++i) pts.push_back(random_cloud(1, rng)[0] * 0.01);

  const Vec3 hole{0, 0, 0};
  const geom::KeypointTriple kp{hole, {0.025, 0, 0}, {0, 0, 0.025}};

  cloud::AugmentSpec identity_spec;
  identity_spec.scale_lo = identity_spec.scale_hi = 1.0;
  identity_spec.rotation_lo = identity_spec.rotation_hi = 0.0;
  identity_spec.seed = 3;

  SUBCASE("the identity transform leaves points and keypoints untouched") {
    const auto res = cloud::augment(pts, hole, kp, identity_spec);
    REQUIRE(res.cloud.size() == pts.size());
    for (size_t i = 0; i < pts.size(); ++i)
      CHECK(near(res.cloud[i], pts[i], 1e-12));
    CHECK(near(res.keypoints.k1, kp.k1, 1e-12));
    CHECK(near(res.keypoints.k2, kp.k2, 1e-12));
    CHECK(near(res.keypoints.k3, kp.k3, 1e-12));
  }

  SUBCASE("points inside the exclusion ball never move") {
    cloud::AugmentSpec spec;  // full random transform
    spec.seed = 11;
    const auto res = cloud::augment(pts, hole, kp, spec);
    for (size_t i = 0; i < pts.size(); ++i)
      if ((pts[i] - hole).norm() <= spec.hole_exclusion_radius)
        CHECK(near(res.cloud[i], pts[i], 1e-12));
  }

  SUBCASE("a pure rotation preserves pairwise distances of moved points") {
    cloud::AugmentSpec spec;
    spec.mode = cloud::AugmentMode::kRotate;
    spec.seed = 12;
    const auto res = cloud::augment(pts, hole, kp, spec);
    std::vector<size_t> moved;
    for (size_t i = 0; i < pts.size(); ++i)
      if (!near(res.cloud[i], pts[i], 0.0)) moved.push_back(i);
    REQUIRE(moved.size() > 10);
    for (size_t i = 1; i < moved.size(); ++i) {
      const double before = (pts[moved[i]] - pts[moved[0]]).norm();
      const double after =
          (res.cloud[moved[i]] - res.cloud[moved[0]]).norm();
      CHECK(after == doctest::Approx(before).epsilon(1e-9));
    }
    // k2 follows the rotation: its distance to k1 is preserved.
    CHECK((res.keypoints.k2 - res.keypoints.k1).norm() ==
          doctest::Approx(0.025).epsilon(1e-9));
  }

  SUBCASE("the stored confidence map matches the transformed geometry") {
    cloud::AugmentSpec spec;
    spec.seed = 13;
    const auto res = cloud::augment(pts, hole, kp, spec);
    REQUIRE(res.map.size() == res.cloud.size());
    for (size_t i = 0; i < res.cloud.size(); ++i) {
      const double expect = geom::gaussian_confidence(
          res.cloud[i], res.keypoints.k1, spec.confidence_sigma);
      CHECK(std::abs(res.map[i] - expect) < 1e-12);
    }
  }

  SUBCASE("same seed reproduces the augmentation") {
    cloud::AugmentSpec spec;
    spec.seed = 14;
    const auto r1 = cloud::augment(pts, hole, kp, spec);
    const auto r2 = cloud::augment(pts, hole, kp, spec);
    CHECK(same_clouds(r1.cloud, r2.cloud));
    CHECK(r1.map == r2.map);
  }
}

TEST_CASE("resample_to reaches the requested size from either side") {
  Rng rng(27);
  const PointCloud pts = random_cloud(50, rng);

  auto is_member = [&](const Vec3& p) {
    for (const Vec3& q : pts)
      if (near(q, p)) return true;
    return false;
  };

  const PointCloud down = cloud::resample_to(pts, 20, 4);
  REQUIRE(down.size() == 20);
  for (const Vec3& p : down) CHECK(is_member(p));

  const PointCloud up = cloud::resample_to(pts, 80, 4);
  REQUIRE(up.size() == 80);
  for (const Vec3& p : up) CHECK(is_member(p));

  CHECK(cloud::resample_to(pts, 50, 4).size() == 50);
  CHECK(same_clouds(cloud::resample_to(pts, 20, 4),
                    cloud::resample_to(pts, 20, 4)));
}

TEST_CASE("centroid and lexicographic anchor") {
  const PointCloud pts{{1, 0, 0}, {0, 2, 0}, {0, 0, 3}, {-1, -2, -3}};
  CHECK(near(cloud::centroid(pts), {0, 0, 0}, 1e-12));
  CHECK(cloud::lexicographic_min_index(pts) == 3);

  const PointCloud tie{{1, 5, 0}, {1, 4, 0}};
  CHECK(cloud::lexicographic_min_index(tie) == 1);
}

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "peghole/geom.hpp"
#include "peghole/rng.hpp"

namespace peghole::cloud {

using geom::Vec3;

using PointCloud = std::vector<Vec3>;

// Per-point confidence weights in [0, 1], aligned with a cloud by index.
using ConfidenceMap = std::vector<double>;

// Per-point votes for the three keypoints: candidates[i][j] is point i's
// candidate position for keypoint j.
using KeypointCandidates = std::vector<std::array<Vec3, 3>>;

enum class AugmentMode { kScale, kRotate, kMix };

// Contour augmentation parameters.  Points within hole_exclusion_radius of
// the hole center never move; confidence labels are recomputed from the
// transformed geometry with confidence_sigma.
struct AugmentSpec {
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double rotation_lo = -M_PI;   // about the object-frame z axis
  double rotation_hi = M_PI;
  AugmentMode mode = AugmentMode::kMix;
  double hole_exclusion_radius = 0.035;
  double confidence_sigma = 0.025;
  std::uint64_t seed = 0;
};

// Greedy farthest-point sampling.  Returns m distinct indices; the first is
// seed % cloud.size().  Ties are broken toward the smallest index.
// Throws CountOutOfRange unless 1 <= m <= cloud.size(); EmptyCloud on empty.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int m,
                                       std::uint64_t seed);

// Farthest-point sampling with an explicit start index (shared core of the
// seeded variant; also used where a geometry-derived start is needed).
std::vector<int> farthest_point_sample_from(const PointCloud& cloud, int m,
                                            int start_index);

// Index of the lexicographically smallest point (x, then y, then z, then
// index).  Gives sampling a permutation-stable anchor.
int lexicographic_min_index(const PointCloud& cloud);

// Up to max_k neighbor indices of `center` within `radius`, nearest first
// (ties: lexicographic point order, then index).  If no point lies within
// the radius, the single nearest point is substituted so the result is
// never empty.  Throws EmptyCloud on an empty cloud.
std::vector<int> ball_query(const PointCloud& cloud, const Vec3& center,
                            double radius, int max_k);

// Points within `radius` of `center`, resampled to exactly n_out points
// (seeded subset without replacement when enough, with replacement when
// short).  Throws EmptyCrop when nothing is in range, CountOutOfRange for
// n_out < 1 or radius <= 0.
PointCloud crop_near(const PointCloud& cloud, const Vec3& center,
                     double radius, int n_out, std::uint64_t seed);

// Adds i.i.d. N(0, sigma^2) noise per coordinate.  sigma = 0 is an exact
// identity.  Negative sigma throws InvalidSigma.
PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, Rng& rng);

// Confidence-weighted average of per-point keypoint candidates:
//   k_j = sum_i w_i * c_ij / sum_i w_i.
// Falls back to uniform weights when sum_i w_i < 1e-9.
// Throws ShapeMismatch when sizes differ, EmptyCloud on empty input.
std::array<Vec3, 3> weighted_keypoint_aggregate(
    const KeypointCandidates& candidates, const ConfidenceMap& weights);

struct AugmentResult {
  PointCloud cloud;
  geom::KeypointTriple keypoints;
  ConfidenceMap map;
};

// Applies contour augmentation in the object frame derived from
// the keypoint labels: independent x/y scaling, rotation about the object z
// axis through k1, or both (kMix).  Points inside the exclusion ball stay
// fixed; k2 rotates with rotation; the confidence map is recomputed from the
// transformed points so labels always match the geometry.
AugmentResult augment(const PointCloud& cloud, const Vec3& hole_center,
                      const geom::KeypointTriple& keypoints,
                      const AugmentSpec& spec);

// Downsamples (FPS) or pads (seeded resample with replacement) to exactly n
// points.  Used to feed fixed-size network inputs.
PointCloud resample_to(const PointCloud& cloud, int n, std::uint64_t seed);

Vec3 centroid(const PointCloud& cloud);

}  // namespace peghole::cloud

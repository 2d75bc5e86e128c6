#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "peghole/cloud.hpp"
#include "peghole/geom.hpp"
#include "peghole/nn.hpp"
#include "peghole/rng.hpp"
#include "peghole/simworld.hpp"

namespace peghole::datagen {

using cloud::PointCloud;
using geom::Pose;
using geom::Vec3;

// Keypoint geometry: k2 and k3 sit 25 mm from the hole center along the
// hole frame's x and z axes; the confidence map uses a Gaussian of the same
// spatial scale.
constexpr double kKeypointOffset = 0.025;
constexpr double kConfidenceSigma = 0.025;

// World-frame keypoint labels for a hole pose: k1 = mouth center,
// k2 = k1 + 25 mm along the hole x-axis, k3 = k1 + 25 mm along the z-axis.
geom::KeypointTriple gt_keypoints(const Pose& hole_pose);

// One coarse-stage training sample: a world-frame cloud with per-point
// offsets to the three keypoints and the Gaussian confidence labels.
struct CoarseRecord {
  PointCloud cloud;
  std::vector<std::array<Vec3, 3>> gt_offsets;
  cloud::ConfidenceMap gt_map;
  Pose hole_pose;  // pose implied by the labels (equals the scene's hole
                   // pose for unaugmented records)
};

// One fine-stage training sample.  The cloud is the tip-centered crop
// expressed in the end-effector frame; the labels are the world-frame
// corrective offsets of the servo update rule, so applying (delta_t,
// delta_r) to ee_pose reaches target_pose.
struct FineRecord {
  PointCloud cloud;
  Vec3 gt_delta_t;
  geom::EulerAngles gt_delta_r;
  Pose ee_pose;      // perturbed pose the cloud was captured at
  Pose target_pose;  // hole pose lifted by the standoff
};

struct CoarseGenConfig {
  sim::TrialConfig trial;      // scene randomization (noise_sigma unused)
  int n_points = 1024;
  double sigma = kConfidenceSigma;
  double train_noise_sigma = 0.0;  // clouds are noise-free unless enabled
  bool augment = false;
  cloud::AugmentSpec augment_spec;
};

struct FineGenConfig {
  sim::TrialConfig trial;
  int n_points = 512;
  double crop_radius = 0.08;
  double standoff = 0.05;
  double max_dt = 0.02;        // per-axis translation envelope, meters
  double max_dr_deg = 10.0;    // per-axis rotation envelope
  double train_noise_sigma = 0.0;
};

// Generates m coarse records from independently sampled scenes.  Labels are
// exact by construction: every point's candidate (x_i + offset) equals the
// ground-truth keypoint.  Augmentation, when enabled, transforms points and
// labels together.
std::vector<CoarseRecord> gen_coarse(int m, const CoarseGenConfig& cfg,
                                     Rng& rng);

// Generates l fine records: the end-effector is placed at the exact inverse
// of a sampled perturbation from the pre-insertion target, so the stored
// positive offsets return it to the target under the servo update rule.
std::vector<FineRecord> gen_fine(int l, const FineGenConfig& cfg, Rng& rng);

// Training-item views.  Coarse items point into the records (records must
// outlive them); fine items convert the world-frame labels into the
// end-effector frame the offset network predicts in.
std::vector<net::CoarseItem> to_coarse_items(
    const std::vector<CoarseRecord>& records);
std::vector<net::FineItem> to_fine_items(
    const std::vector<FineRecord>& records);

// Versioned binary serialization (magic, version, kind, count, point count,
// little-endian doubles, trailing checksum).  Round trips are bit-exact.
void save_dataset(const std::string& path,
                  const std::vector<CoarseRecord>& records);
void save_dataset(const std::string& path,
                  const std::vector<FineRecord>& records);
std::vector<CoarseRecord> load_coarse_dataset(const std::string& path);
std::vector<FineRecord> load_fine_dataset(const std::string& path);

// Human-readable manifest written next to a dataset file (path + ".manifest").
void write_manifest(
    const std::string& dataset_path,
    const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace peghole::datagen

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "peghole/cloud.hpp"
#include "peghole/geom.hpp"
#include "peghole/tensor.hpp"

namespace peghole::net {

using cloud::ConfidenceMap;
using cloud::KeypointCandidates;
using cloud::PointCloud;
using geom::Vec3;

// ---------------------------------------------------------------------------
// Architecture configuration

struct SaLevelConfig {
  int centers = 128;   // points kept by farthest-point sampling
  double radius = 0.03;  // grouping ball radius, meters
  int group_k = 16;    // neighbors per group (padded by repetition)
  int hidden = 32;     // width of the two shared MLP layers
};

// Two set-abstraction levels; per-point nets add two feature-propagation
// stages back to full resolution, global nets add a max-pooled stage.
struct BackboneConfig {
  SaLevelConfig sa1{128, 0.03, 16, 32};
  SaLevelConfig sa2{32, 0.09, 16, 64};
  int fp1_out = 64;       // width after propagating to sa1 centers
  int fp0_out = 64;       // per-point feature width C at input resolution
  int global_hidden = 128;  // global feature width D (max-pooled)
  double coord_scale = 10.0;  // meters -> network units for raw coordinates
};

struct KeypointNetConfig {
  int n_points = 1024;  // expected input cloud size
  BackboneConfig backbone;
  int head_hidden = 64;
};

struct OffsetNetConfig {
  int n_points = 512;
  BackboneConfig backbone;
  int head_hidden = 64;
};

// ---------------------------------------------------------------------------
// Sampling plan: the non-differentiable index structure of one forward pass.

struct SamplingPlan {
  std::vector<int> sa1_centers;                  // into input cloud
  std::vector<int> sa1_neighbors;                // [n1 * k], into input cloud
  std::vector<int> sa2_centers;                  // into sa1 centers
  std::vector<int> sa2_neighbors;                // [n2 * k], into sa1 centers
  std::vector<std::array<int, 3>> fp1_nbr;       // per sa1 center, into sa2
  std::vector<std::array<double, 3>> fp1_w;
  std::vector<std::array<int, 3>> fp0_nbr;       // per input point, into sa1
  std::vector<std::array<double, 3>> fp0_w;
};

// Deterministic, permutation-covariant plan (FPS anchored at the
// lexicographically smallest point; neighbor sets are nearest-first).
SamplingPlan compute_sampling(const PointCloud& pts, const BackboneConfig& cfg,
                              bool per_point);

// ---------------------------------------------------------------------------
// Models.  Parameters are named tensors in a fixed declaration order.

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct KeypointNetGraph {
  Var offsets;            // [B*n, 9]
  Var confidence;         // [B*n, 1], already squashed into (0, 1)
  std::vector<Var> params;  // leaves, model parameter order
};

struct OffsetNetGraph {
  Var delta_t;            // [B, 3]
  Var delta_r;            // [B, 3]
  std::vector<Var> params;
};

class KeypointNet {
 public:
  explicit KeypointNet(const KeypointNetConfig& cfg = {});
  void init(Rng& rng);

  const KeypointNetConfig& config() const { return cfg_; }
  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }

  // Batched graph construction.  Clouds are world-frame; the net centers each
  // cloud on its centroid internally, so candidate votes (point + offset) are
  // translation-equivariant.  `plans` may be null (computed on the fly) or
  // supply one plan per cloud (tests pin sampling with it).
  KeypointNetGraph forward(Tape& tape,
                           const std::vector<const PointCloud*>& batch,
                           bool params_require_grad,
                           const std::vector<SamplingPlan>* plans = nullptr) const;

 private:
  KeypointNetConfig cfg_;
  std::vector<NamedTensor> params_;
};

class OffsetNet {
 public:
  explicit OffsetNet(const OffsetNetConfig& cfg = {});
  void init(Rng& rng);

  const OffsetNetConfig& config() const { return cfg_; }
  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }

  OffsetNetGraph forward(Tape& tape,
                         const std::vector<const PointCloud*>& batch,
                         bool params_require_grad,
                         const std::vector<SamplingPlan>* plans = nullptr) const;

 private:
  OffsetNetConfig cfg_;
  std::vector<NamedTensor> params_;
};

// ---------------------------------------------------------------------------
// Inference wrappers

struct KeypointPrediction {
  KeypointCandidates candidates;  // point + predicted offset, world frame
  ConfidenceMap confidence;
};

// Single-cloud keypoint inference.  Cloud size must equal config n_points.
KeypointPrediction predict_keypoints(const KeypointNet& net,
                                     const PointCloud& cloud);

struct OffsetPrediction {
  Vec3 delta_t;
  geom::EulerAngles delta_r;
};

// Single-cloud offset inference; offsets are expressed in the same frame as
// the input cloud.  Cloud size must equal config n_points.
OffsetPrediction predict_offset(const OffsetNet& net, const PointCloud& cloud);

// ---------------------------------------------------------------------------
// Losses.  Formulas (value-only paths reuse the tape composites):
//   L_kpts  = (1/N) sum_i w*_i sum_j |dk_ij - dk*_ij|
//   L_map   = sqrt((1/N) sum_i (w_i - w*_i)^2)
//   L_trans = sqrt(mean_c (dt_c - dt*_c)^2) + (1 - cos(dt, dt*)), cosine term
//             dropped when either norm < 1e-9
//   L_rot   = sqrt(mean_c (dr_c - dr*_c)^2)
// Batches average the per-sample losses.

struct LossBreakdown {
  double total = 0.0;
  double kpts = 0.0;
  double map = 0.0;
  double trans = 0.0;
  double rot = 0.0;
};

LossBreakdown loss_coarse(const Tensor& pred_offsets, const Tensor& pred_conf,
                          const Tensor& gt_offsets, const Tensor& gt_map,
                          int points_per_sample);

LossBreakdown loss_fine(const Tensor& pred_dt, const Tensor& pred_dr,
                        const Tensor& gt_dt, const Tensor& gt_dr);

// ---------------------------------------------------------------------------
// Training

struct CoarseItem {
  const PointCloud* cloud;                                // world frame, n pts
  const std::vector<std::array<Vec3, 3>>* gt_offsets;     // per point
  const std::vector<double>* gt_map;
};

struct FineItem {
  PointCloud cloud;  // end-effector frame, n' pts
  Vec3 delta_t;      // same frame
  Vec3 delta_r;
};

struct TrainConfig {
  int epochs = 60;
  int batch = 16;
  double lr = 1e-3;
  double lr_final_factor = 0.1;  // cosine decay floor, as a fraction of lr
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct EpochStats {
  int epoch = 0;       // 1-based
  double total = 0.0;  // mean over the epoch's batches
  double part_a = 0.0;  // kpts / trans
  double part_b = 0.0;  // map / rot
  int rejected_steps = 0;
};

struct TrainResult {
  std::vector<EpochStats> curve;  // exactly `epochs` rows
  double final_eval_loss = 0.0;   // full-dataset loss at the final parameters
};

TrainResult train_keypoint_net(KeypointNet& net,
                               const std::vector<CoarseItem>& data,
                               const TrainConfig& cfg);

TrainResult train_offset_net(OffsetNet& net, const std::vector<FineItem>& data,
                             const TrainConfig& cfg);

// Full-dataset mean loss under the current (frozen) parameters.
double eval_coarse_loss(const KeypointNet& net,
                        const std::vector<CoarseItem>& data, int batch);
double eval_fine_loss(const OffsetNet& net, const std::vector<FineItem>& data,
                      int batch);

// ---------------------------------------------------------------------------
// Checkpoints.  Binary, little-endian doubles, FNV-1a checksum; loading
// validates magic, version, kind, config-implied shapes and the checksum.

struct CheckpointMeta {
  double eval_loss_at_save = 0.0;
  long epochs_trained = 0;
};

void save_keypoint_net(const std::string& path, const KeypointNet& net,
                       const CheckpointMeta& meta);
void save_offset_net(const std::string& path, const OffsetNet& net,
                     const CheckpointMeta& meta);
KeypointNet load_keypoint_net(const std::string& path, CheckpointMeta* meta = nullptr);
OffsetNet load_offset_net(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace peghole::net

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "peghole/cloud.hpp"
#include "peghole/datagen.hpp"
#include "peghole/geom.hpp"
#include "peghole/nn.hpp"
#include "peghole/rng.hpp"
#include "peghole/simworld.hpp"

namespace peghole::control {

using cloud::ConfidenceMap;
using cloud::PointCloud;
using geom::Pose;
using geom::Vec3;

struct ControllerConfig {
  double e_t = 0.001;                   // translation tolerance [m]
  double e_r = geom::deg2rad(1.0);      // rotation tolerance [rad]
  int max_iters = 10;                   // servo iteration cap
  double standoff = 0.05;               // pre-insertion height above mouth [m]
  double crop_radius = 0.08;            // fine-stage crop around the tip [m]
  int coarse_points = 1024;             // cloud size fed to the keypoint net
  int fine_points = 512;                // crop size fed to the offset net
  double sensor_noise_sigma = 0.0;      // per-axis depth noise at capture [m]
};

// Produces hole keypoint candidates from a captured cloud.  The scene is
// available so oracle implementations can read ground truth.
class KeypointPredictor {
 public:
  virtual ~KeypointPredictor() = default;
  virtual net::KeypointPrediction predict(const sim::Scene& scene,
                                          const PointCloud& cloud) const = 0;
};

// Produces a corrective world-frame motion from a cropped cloud.
class OffsetPredictor {
 public:
  virtual ~OffsetPredictor() = default;
  virtual net::OffsetPrediction predict(const sim::Scene& scene,
                                        const PointCloud& crop) const = 0;
};

// Wraps a trained keypoint network; the scene is ignored.
class LearnedKeypointPredictor : public KeypointPredictor {
 public:
  explicit LearnedKeypointPredictor(const net::KeypointNet& n) : net_(&n) {}
  net::KeypointPrediction predict(const sim::Scene& scene,
                                  const PointCloud& cloud) const override;

 private:
  const net::KeypointNet* net_;
};

// Wraps a trained offset network.  The network consumes and predicts in the
// end-effector frame; this adapter converts the world-frame crop in and the
// relative correction back out:
//   dt_world = R_ee * dt_rel,  dR_world = R_ee * R(dr_rel) * R_ee^T.
class LearnedOffsetPredictor : public OffsetPredictor {
 public:
  explicit LearnedOffsetPredictor(const net::OffsetNet& n) : net_(&n) {}
  net::OffsetPrediction predict(const sim::Scene& scene,
                                const PointCloud& crop) const override;

 private:
  const net::OffsetNet* net_;
};

// Emits ground-truth keypoint offsets with the analytic confidence profile.
// An optional bias displaces every keypoint, for robustness probes.
class OracleKeypointPredictor : public KeypointPredictor {
 public:
  OracleKeypointPredictor() = default;
  explicit OracleKeypointPredictor(const Vec3& bias) : bias_(bias) {}
  net::KeypointPrediction predict(const sim::Scene& scene,
                                  const PointCloud& cloud) const override;

 private:
  Vec3 bias_{0.0, 0.0, 0.0};
};

// Emits the exact world-frame correction toward the standoff target.
class OracleOffsetPredictor : public OffsetPredictor {
 public:
  explicit OracleOffsetPredictor(double standoff) : standoff_(standoff) {}
  net::OffsetPrediction predict(const sim::Scene& scene,
                                const PointCloud& crop) const override;

 private:
  double standoff_;
};

// Always reports zero correction; the servo loop should stop immediately.
class ZeroOffsetPredictor : public OffsetPredictor {
 public:
  net::OffsetPrediction predict(const sim::Scene& scene,
                                const PointCloud& crop) const override;
};

// Exact correction from an end-effector pose to the hole standoff target.
net::OffsetPrediction oracle_offset(const sim::Scene& scene,
                                    const Pose& ee_pose, double standoff);

// Pipeline stage toggles for ablations.
struct PipelineOptions {
  bool use_coarse = true;           // run the open-loop alignment stage
  bool use_servo = true;            // run the closed-loop refinement stage
  bool uniform_aggregation = false; // ignore confidence when voting
};

struct CoarseResult {
  std::array<Vec3, 3> keypoints;  // aggregated votes, world frame
  Pose estimated_hole;            // orthonormalized from the keypoints
  Pose commanded;                 // standoff pose the arm moved to
};

// One capture-predict-move (or terminate) cycle of the fine stage.
struct ServoIteration {
  Vec3 delta_t;                  // predicted world-frame translation step
  geom::EulerAngles delta_r;     // predicted world-frame rotation step
  double step_translation = 0.0; // |delta_t|
  double step_rotation = 0.0;    // |delta_r| (Euclidean on the angles)
  bool moved = false;            // false when the step was below tolerance
  Pose commanded;                // pose after this iteration
  // Distance to the true standoff target, recorded for analysis only; the
  // termination test never reads these.
  double residual_translation = 0.0;
  double residual_rotation = 0.0;
};

struct ServoTrace {
  std::vector<ServoIteration> iterations;
  bool below_tolerance = false;  // stopped because the step shrank enough
  bool reached_max = false;      // stopped at the iteration cap
};

// Open-loop stage: capture, vote keypoints, orthonormalize a hole pose, and
// move to its standoff point.  Mutates the scene's end-effector pose.
CoarseResult coarse_step(sim::Scene& scene, const KeypointPredictor& kp,
                         const ControllerConfig& cfg, Rng& rng,
                         bool uniform_aggregation = false);

// Closed-loop stage: repeat capture/crop/predict; stop without moving once
// both step norms are inside tolerance, else apply the step, up to max_iters.
ServoTrace servo_loop(sim::Scene& scene, const OffsetPredictor& op,
                      const ControllerConfig& cfg, Rng& rng);

// Straight-line descent along the hole axis followed by the containment
// check at full insertion depth.
sim::InsertionOutcome insert(sim::Scene& scene);

struct TrialResult {
  bool success = false;
  int servo_iterations = 0;
  double residual_translation = 0.0;  // lateral offset at insertion [m]
  double residual_tilt = 0.0;         // axis tilt at insertion [rad]
  double depth_reached = 0.0;         // [m] into the cavity
  double wall_time = 0.0;             // [s], whole trial
  std::string error;                  // nonempty when a stage threw
};

// Full trial: sample a scene, run the enabled stages, insert, and score.
// Stage exceptions are caught and reported as failed trials.
TrialResult run_trial(const sim::TrialConfig& trial,
                      const KeypointPredictor& kp, const OffsetPredictor& op,
                      const ControllerConfig& cfg, const PipelineOptions& opt,
                      Rng& rng);

// Writes a line-per-iteration text trace for offline inspection.
void write_trace(const std::string& path, const ServoTrace& trace);

}  // namespace peghole::control

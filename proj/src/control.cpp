#include "peghole/control.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "peghole/errors.hpp"

namespace peghole::control {

namespace {

// Standoff target above the true hole mouth, used by the oracles.
Pose standoff_target(const Pose& hole_pose, double standoff) {
  return {hole_pose.R, hole_pose.t + hole_pose.R.col_z() * standoff};
}

}  // namespace

net::KeypointPrediction LearnedKeypointPredictor::predict(
    const sim::Scene&, const PointCloud& cloud) const {
  return net::predict_keypoints(*net_, cloud);
}

net::OffsetPrediction LearnedOffsetPredictor::predict(
    const sim::Scene& scene, const PointCloud& crop) const {
  const Pose& ee = scene.ee_pose;
  const geom::RotationMatrix Rt = ee.R.transpose();
  PointCloud rel;
  rel.reserve(crop.size());
  for (const Vec3& p : crop) rel.push_back(Rt * (p - ee.t));
  const net::OffsetPrediction local = net::predict_offset(*net_, rel);

  net::OffsetPrediction world;
  world.delta_t = ee.R * local.delta_t;
  const geom::RotationMatrix dR_world =
      ee.R * geom::euler_to_rotation(local.delta_r) * Rt;
  world.delta_r = geom::rotation_to_euler(dR_world);
  return world;
}

net::KeypointPrediction OracleKeypointPredictor::predict(
    const sim::Scene& scene, const PointCloud& cloud) const {
  geom::KeypointTriple kp = datagen::gt_keypoints(scene.hole.pose);
  kp.k1 = kp.k1 + bias_;
  kp.k2 = kp.k2 + bias_;
  kp.k3 = kp.k3 + bias_;
  net::KeypointPrediction pred;
  pred.candidates.resize(cloud.size());
  pred.confidence.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    pred.candidates[i] = {kp.k1, kp.k2, kp.k3};
    pred.confidence[i] = geom::gaussian_confidence(cloud[i], kp.k1,
                                                   datagen::kConfidenceSigma);
  }
  return pred;
}

net::OffsetPrediction oracle_offset(const sim::Scene& scene,
                                    const Pose& ee_pose, double standoff) {
  const Pose target = standoff_target(scene.hole.pose, standoff);
  net::OffsetPrediction p;
  p.delta_t = target.t - ee_pose.t;
  const geom::RotationMatrix dR = target.R * ee_pose.R.transpose();
  p.delta_r = geom::rotation_to_euler(dR);
  return p;
}

net::OffsetPrediction OracleOffsetPredictor::predict(
    const sim::Scene& scene, const PointCloud&) const {
  return oracle_offset(scene, scene.ee_pose, standoff_);
}

net::OffsetPrediction ZeroOffsetPredictor::predict(const sim::Scene&,
                                                   const PointCloud&) const {
  return {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
}

CoarseResult coarse_step(sim::Scene& scene, const KeypointPredictor& kp,
                         const ControllerConfig& cfg, Rng& rng,
                         bool uniform_aggregation) {
  const PointCloud cloud = sim::capture_cloud(
      scene, cfg.coarse_points, cfg.sensor_noise_sigma, rng);
  const net::KeypointPrediction pred = kp.predict(scene, cloud);

  CoarseResult res;
  if (uniform_aggregation) {
    ConfidenceMap ones(pred.confidence.size(), 1.0);
    res.keypoints = cloud::weighted_keypoint_aggregate(pred.candidates, ones);
  } else {
    res.keypoints =
        cloud::weighted_keypoint_aggregate(pred.candidates, pred.confidence);
  }
  res.estimated_hole = geom::pose_from_keypoints(
      {res.keypoints[0], res.keypoints[1], res.keypoints[2]});
  res.commanded.R = res.estimated_hole.R;
  res.commanded.t =
      res.estimated_hole.t + res.estimated_hole.R.col_z() * cfg.standoff;
  scene = sim::move_ee(scene, res.commanded);
  return res;
}

namespace {

// Angle of the rotation taking `a` to `b`.
double rotation_gap(const geom::RotationMatrix& a,
                    const geom::RotationMatrix& b) {
  const geom::RotationMatrix d = b * a.transpose();
  const double tr = d(0, 0) + d(1, 1) + d(2, 2);
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

void record_residual(ServoIteration& it, const sim::Scene& scene,
                     double standoff) {
  const Pose target = standoff_target(scene.hole.pose, standoff);
  it.commanded = scene.ee_pose;
  it.residual_translation = (target.t - scene.ee_pose.t).norm();
  it.residual_rotation = rotation_gap(scene.ee_pose.R, target.R);
}

}  // namespace

ServoTrace servo_loop(sim::Scene& scene, const OffsetPredictor& op,
                      const ControllerConfig& cfg, Rng& rng) {
  ServoTrace trace;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const PointCloud raw =
        sim::capture_cloud(scene, 0, cfg.sensor_noise_sigma, rng);
    const PointCloud crop = cloud::crop_near(
        raw, scene.ee_pose.t, cfg.crop_radius, cfg.fine_points, rng.raw());
    const net::OffsetPrediction pred = op.predict(scene, crop);

    ServoIteration it;
    it.delta_t = pred.delta_t;
    it.delta_r = pred.delta_r;
    it.step_translation = pred.delta_t.norm();
    it.step_rotation = pred.delta_r.norm();

    if (it.step_translation < cfg.e_t && it.step_rotation < cfg.e_r) {
      record_residual(it, scene, cfg.standoff);
      trace.iterations.push_back(it);
      trace.below_tolerance = true;
      return trace;
    }

    Pose next;
    next.R = geom::euler_to_rotation(pred.delta_r) * scene.ee_pose.R;
    next.t = scene.ee_pose.t + pred.delta_t;
    scene = sim::move_ee(scene, next);
    it.moved = true;
    record_residual(it, scene, cfg.standoff);
    trace.iterations.push_back(it);
  }
  trace.reached_max = true;
  return trace;
}

sim::InsertionOutcome insert(sim::Scene& scene) {
  return sim::check_insertion(scene, scene.ee_pose);
}

TrialResult run_trial(const sim::TrialConfig& trial,
                      const KeypointPredictor& kp, const OffsetPredictor& op,
                      const ControllerConfig& cfg, const PipelineOptions& opt,
                      Rng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialResult res;
  try {
    sim::Scene scene = sim::sample_scene(trial, rng);
    if (opt.use_coarse)
      coarse_step(scene, kp, cfg, rng, opt.uniform_aggregation);
    if (opt.use_servo) {
      const ServoTrace trace = servo_loop(scene, op, cfg, rng);
      res.servo_iterations = static_cast<int>(trace.iterations.size());
    }
    const sim::InsertionOutcome out = insert(scene);
    res.success = out.success;
    res.residual_translation = out.lateral_offset;
    res.residual_tilt = out.tilt;
    res.depth_reached = out.depth_reached;
  } catch (const Error& e) {
    res.success = false;
    res.error = e.what();
  }
  const auto t1 = std::chrono::steady_clock::now();
  res.wall_time = std::chrono::duration<double>(t1 - t0).count();
  return res;
}

void write_trace(const std::string& path, const ServoTrace& trace) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  char line[320];
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const ServoIteration& it = trace.iterations[i];
    std::snprintf(line, sizeof(line),
                  "iter=%zu dt=(%.6f %.6f %.6f) dr=(%.6f %.6f %.6f) "
                  "|dt|=%.6f |dr|=%.6f moved=%d res_t=%.6f res_r=%.6f\n",
                  i + 1, it.delta_t.x, it.delta_t.y, it.delta_t.z,
                  it.delta_r.x, it.delta_r.y, it.delta_r.z,
                  it.step_translation, it.step_rotation, it.moved ? 1 : 0,
                  it.residual_translation, it.residual_rotation);
    f << line;
  }
  f << "below_tolerance=" << (trace.below_tolerance ? 1 : 0)
    << " reached_max=" << (trace.reached_max ? 1 : 0) << "\n";
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace peghole::control

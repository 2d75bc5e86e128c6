#include "peghole/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "peghole/control.hpp"
#include "peghole/datagen.hpp"
#include "peghole/errors.hpp"
#include "peghole/geom.hpp"
#include "peghole/nn.hpp"
#include "peghole/rng.hpp"
#include "peghole/simworld.hpp"
#include "peghole/tensor.hpp"

namespace peghole::checks {

using cloud::PointCloud;
using net::Tape;
using net::Tensor;
using net::Var;

namespace {

using geom::Vec3;

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

Vec3 random_unit(Rng& rng) {
  for (;;) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

PointCloud random_cloud(int n, double half, Rng& rng) {
  PointCloud pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i)
    pts.push_back({rng.uniform(-half, half), rng.uniform(-half, half),
                   rng.uniform(-half, half)});
  return pts;
}

// Small-but-structurally-complete configurations for the gradient probes:
// both abstraction levels, both propagation levels, and every head.
net::KeypointNetConfig tiny_keypoint_config() {
  net::KeypointNetConfig c;
  c.n_points = 64;
  c.backbone.sa1 = {16, 0.35, 4, 8};
  c.backbone.sa2 = {8, 0.9, 4, 8};
  c.backbone.fp1_out = 8;
  c.backbone.fp0_out = 8;
  c.head_hidden = 8;
  return c;
}

net::OffsetNetConfig tiny_offset_config() {
  net::OffsetNetConfig c;
  c.n_points = 64;
  c.backbone.sa1 = {16, 0.35, 4, 8};
  c.backbone.sa2 = {8, 0.9, 4, 8};
  c.backbone.global_hidden = 16;
  c.head_hidden = 8;
  return c;
}

constexpr double kFdStep = 1e-5;
constexpr double kRelFloor = 0.01;
constexpr double kRelTol = 1e-4;

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

// Central difference with step fallback.  A secant that straddles a relu or
// max-pool boundary is not a derivative estimate, so an entry that misses at
// the default step is re-measured with smaller steps; a genuinely wrong
// analytic gradient stays wrong at every step size.
template <typename F>
double fd_rel_err(double& cell, double analytic, const F& loss_value) {
  double best = 2.0;
  for (const double h : {kFdStep, kFdStep * 0.1, kFdStep * 0.01}) {
    const double saved = cell;
    cell = saved + h;
    const double up = loss_value();
    cell = saved - h;
    const double down = loss_value();
    cell = saved;
    best = std::min(best, rel_err(analytic, (up - down) / (2.0 * h)));
    if (best < kRelTol) break;
  }
  return best;
}

}  // namespace

CheckResult so3_suite(int n, std::uint64_t seed) {
  Rng rng = Rng(seed).child(0x5033);
  double worst_ortho = 0.0, worst_det = 0.0, worst_axis = 0.0;
  for (int i = 0; i < n; ++i) {
    geom::KeypointTriple kp;
    for (;;) {
      kp.k1 = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
               rng.uniform(-1.0, 1.0)};
      kp.k2 = kp.k1 + random_unit(rng) * rng.uniform(0.01, 0.5);
      kp.k3 = kp.k1 + random_unit(rng) * rng.uniform(0.01, 0.5);
      if ((kp.k2 - kp.k1).cross(kp.k3 - kp.k1).norm() > 1e-6) break;
    }
    const geom::RotationMatrix R = geom::rotation_from_keypoints(kp);
    worst_ortho = std::max(worst_ortho, R.orthonormality_error());
    worst_det = std::max(worst_det, std::abs(R.det() - 1.0));
    const Vec3 z = (kp.k3 - kp.k1).normalized();
    const Vec3 zc = R.col_z();
    worst_axis = std::max({worst_axis, std::abs(zc.x - z.x),
                           std::abs(zc.y - z.y), std::abs(zc.z - z.z)});
  }
  CheckResult r;
  r.name = "so3";
  r.passed = worst_ortho < 1e-9 && worst_det < 1e-9 && worst_axis < 1e-9;
  r.detail = fmt("max ortho %.2e, det %.2e, axis %.2e", worst_ortho, worst_det,
                 worst_axis);
  return r;
}

GradientReport gradient_check_keypoint(std::uint64_t seed,
                                       bool flip_one_gradient) {
  const net::KeypointNetConfig cfg = tiny_keypoint_config();
  net::KeypointNet knet(cfg);
  Rng rng = Rng(seed).child(0x6B67);
  knet.init(rng);

  const PointCloud cloud = random_cloud(cfg.n_points, 0.15, rng);
  std::vector<const PointCloud*> clouds{&cloud};
  std::vector<net::SamplingPlan> plans{
      net::compute_sampling(cloud, cfg.backbone, true)};

  Tensor gt_off = Tensor::zeros({cfg.n_points, 9});
  for (double& x : gt_off.data) x = rng.normal(0.0, 0.05);
  Tensor gt_map = Tensor::zeros({cfg.n_points, 1});
  for (double& x : gt_map.data) x = rng.uniform();

  auto loss_value = [&]() {
    Tape tape;
    net::KeypointNetGraph g = knet.forward(tape, clouds, false, &plans);
    Var lk = tape.loss_weighted_offsets(g.offsets, gt_off, gt_map);
    Var lm = tape.loss_blockwise_rmse(g.confidence, gt_map, cfg.n_points);
    return tape.value(tape.add(lk, lm)).scalar_value();
  };

  Tape tape;
  net::KeypointNetGraph g = knet.forward(tape, clouds, true, &plans);
  Var lk = tape.loss_weighted_offsets(g.offsets, gt_off, gt_map);
  Var lm = tape.loss_blockwise_rmse(g.confidence, gt_map, cfg.n_points);
  tape.backward(tape.add(lk, lm));

  GradientReport rep;
  bool flipped = false;
  for (std::size_t p = 0; p < knet.params().size(); ++p) {
    Tensor& param = knet.params()[p].tensor;
    const Tensor& grad = tape.grad(g.params[p]);
    for (std::size_t i = 0; i < param.data.size(); ++i) {
      double analytic = grad.data[i];
      if (flip_one_gradient && !flipped && std::abs(analytic) > kRelFloor) {
        analytic = -analytic;
        flipped = true;
      }
      rep.max_rel_err = std::max(
          rep.max_rel_err, fd_rel_err(param.data[i], analytic, loss_value));
      ++rep.entries;
    }
  }
  return rep;
}

GradientReport gradient_check_offset(std::uint64_t seed,
                                     bool flip_one_gradient) {
  const net::OffsetNetConfig cfg = tiny_offset_config();
  net::OffsetNet onet(cfg);
  Rng rng = Rng(seed).child(0x6F67);
  onet.init(rng);

  const PointCloud cloud = random_cloud(cfg.n_points, 0.08, rng);
  std::vector<const PointCloud*> clouds{&cloud};
  std::vector<net::SamplingPlan> plans{
      net::compute_sampling(cloud, cfg.backbone, false)};

  Tensor gt_dt = Tensor::zeros({1, 3});
  for (double& x : gt_dt.data) x = rng.normal(0.0, 0.01);
  Tensor gt_dr = Tensor::zeros({1, 3});
  for (double& x : gt_dr.data) x = rng.normal(0.0, 0.05);

  auto loss_value = [&]() {
    Tape tape;
    net::OffsetNetGraph g = onet.forward(tape, clouds, false, &plans);
    Var lt = tape.add(tape.loss_rowwise_rmse(g.delta_t, gt_dt),
                      tape.loss_cosine_gap(g.delta_t, gt_dt));
    Var lr = tape.loss_rowwise_rmse(g.delta_r, gt_dr);
    return tape.value(tape.add(lt, lr)).scalar_value();
  };

  Tape tape;
  net::OffsetNetGraph g = onet.forward(tape, clouds, true, &plans);
  Var lt = tape.add(tape.loss_rowwise_rmse(g.delta_t, gt_dt),
                    tape.loss_cosine_gap(g.delta_t, gt_dt));
  Var lr = tape.loss_rowwise_rmse(g.delta_r, gt_dr);
  tape.backward(tape.add(lt, lr));

  GradientReport rep;
  bool flipped = false;
  for (std::size_t p = 0; p < onet.params().size(); ++p) {
    Tensor& param = onet.params()[p].tensor;
    const Tensor& grad = tape.grad(g.params[p]);
    for (std::size_t i = 0; i < param.data.size(); ++i) {
      double analytic = grad.data[i];
      if (flip_one_gradient && !flipped && std::abs(analytic) > kRelFloor) {
        analytic = -analytic;
        flipped = true;
      }
      rep.max_rel_err = std::max(
          rep.max_rel_err, fd_rel_err(param.data[i], analytic, loss_value));
      ++rep.entries;
    }
  }
  return rep;
}

CheckResult gradient_suite(int inits, std::uint64_t seed,
                           bool flip_one_gradient) {
  double worst = 0.0;
  int entries = 0;
  for (int i = 0; i < inits; ++i) {
    const GradientReport a =
        gradient_check_keypoint(seed + i, flip_one_gradient);
    const GradientReport b = gradient_check_offset(seed + i, flip_one_gradient);
    worst = std::max({worst, a.max_rel_err, b.max_rel_err});
    entries += a.entries + b.entries;
  }
  CheckResult r;
  r.name = "gradients";
  r.passed = worst < kRelTol;
  r.detail = fmt("max rel err %.2e over %.0f entries", worst,
                 static_cast<double>(entries));
  return r;
}

CheckResult loss_suite(int n_random, std::uint64_t seed) {
  Rng rng = Rng(seed).child(0x1055);
  CheckResult r;
  r.name = "losses";
  double min_loss = 1e300, max_at_gt = 0.0;
  const int n = 8;
  for (int i = 0; i < n_random; ++i) {
    Tensor po = Tensor::zeros({n, 9});
    Tensor pc = Tensor::zeros({n, 1});
    Tensor go = Tensor::zeros({n, 9});
    Tensor gm = Tensor::zeros({n, 1});
    for (double& x : po.data) x = rng.normal(0.0, 0.1);
    for (double& x : pc.data) x = rng.uniform();
    for (double& x : go.data) x = rng.normal(0.0, 0.1);
    for (double& x : gm.data) x = rng.uniform();
    const net::LossBreakdown c = net::loss_coarse(po, pc, go, gm, n);
    min_loss = std::min(min_loss, c.total);
    const net::LossBreakdown cz = net::loss_coarse(go, gm, go, gm, n);
    max_at_gt = std::max(max_at_gt, cz.total);

    Tensor dt = Tensor::zeros({1, 3});
    Tensor dr = Tensor::zeros({1, 3});
    Tensor gdt = Tensor::zeros({1, 3});
    Tensor gdr = Tensor::zeros({1, 3});
    for (double& x : dt.data) x = rng.normal(0.0, 0.02);
    for (double& x : dr.data) x = rng.normal(0.0, 0.1);
    for (double& x : gdt.data) x = rng.normal(0.0, 0.02);
    for (double& x : gdr.data) x = rng.normal(0.0, 0.1);
    const net::LossBreakdown f = net::loss_fine(dt, dr, gdt, gdr);
    min_loss = std::min(min_loss, f.total);
    const net::LossBreakdown fz = net::loss_fine(gdt, gdr, gdt, gdr);
    max_at_gt = std::max(max_at_gt, fz.total);
  }

  // Worked example 1: two points, uniform unit weights; per-point summed
  // offset errors 1 and 3 -> L_kpts = (1 + 3) / 2 = 2.
  Tensor po = Tensor::zeros({2, 9});
  Tensor go = Tensor::zeros({2, 9});
  Tensor w = Tensor::zeros({2, 1});
  w.data = {1.0, 1.0};
  po.data[0] = 1.0;               // point 0: one offset off by 1
  po.data[9] = 2.0;               // point 1: off by 2
  po.data[12] = 1.0;              // and by 1 -> sum 3
  const double l_kpts =
      net::loss_coarse(po, w, go, w, 2).kpts;  // conf == map -> map term 0
  const bool ex1 = std::abs(l_kpts - 2.0) < 1e-12;

  // Worked example 2: dt = 2*dt_gt with dt_gt = (1e-3, 1e-3, 1e-3): cosine
  // term exactly 0, RMSE = 1e-3; opposite direction scores cosine 2.
  Tensor dt = Tensor::zeros({1, 3});
  Tensor gdt = Tensor::zeros({1, 3});
  Tensor zr = Tensor::zeros({1, 3});
  for (int c = 0; c < 3; ++c) {
    gdt.data[c] = 1e-3;
    dt.data[c] = 2e-3;
  }
  const double l_trans = net::loss_fine(dt, zr, gdt, zr).trans;
  const bool ex2 = std::abs(l_trans - 1e-3) < 1e-12;
  for (int c = 0; c < 3; ++c) dt.data[c] = -1e-3;
  const double l_opp = net::loss_fine(dt, zr, gdt, zr).trans;
  const bool ex3 = std::abs(l_opp - (2e-3 + 2.0)) < 1e-12;

  r.passed = min_loss >= 0.0 && max_at_gt < 1e-12 && ex1 && ex2 && ex3;
  r.detail = fmt("min %.2e, at-gt %.2e", min_loss, max_at_gt) +
             (ex1 && ex2 && ex3 ? ", worked examples ok"
                                : ", worked examples FAILED");
  return r;
}

CheckResult oracle_suite(int trials_per_mode, std::uint64_t seed) {
  CheckResult r;
  r.name = "oracles";
  const control::ControllerConfig ctl;
  const control::PipelineOptions opt;
  const control::OracleKeypointPredictor kp;
  const control::OracleOffsetPredictor op(ctl.standoff);
  int failures = 0, total = 0;
  for (int dof : {3, 4, 6}) {
    for (int i = 0; i < trials_per_mode; ++i) {
      sim::TrialConfig t;
      t.dof = dof == 3   ? sim::DofMode::k3Dof
              : dof == 4 ? sim::DofMode::k4Dof
                         : sim::DofMode::k6Dof;
      t.noise_sigma = 0.0;
      t.seed = Rng(seed).child(dof).raw() ^ static_cast<std::uint64_t>(i);
      Rng rng(t.seed);
      const control::TrialResult res =
          control::run_trial(t, kp, op, ctl, opt, rng);
      if (!res.success) ++failures;
      ++total;
    }
  }

  // Servo contracts on one fixed scene.
  sim::TrialConfig t;
  t.dof = sim::DofMode::k6Dof;
  t.seed = seed;
  bool contracts = true;
  {
    Rng rng(t.seed);
    sim::Scene scene = sim::sample_scene(t, rng);
    control::coarse_step(scene, kp, ctl, rng);
    const control::ZeroOffsetPredictor zero;
    const control::ServoTrace tr = control::servo_loop(scene, zero, ctl, rng);
    contracts = contracts && tr.iterations.size() == 1 &&
                tr.below_tolerance && !tr.iterations[0].moved;
  }
  {
    Rng rng(t.seed);
    sim::Scene scene = sim::sample_scene(t, rng);
    control::coarse_step(scene, kp, ctl, rng);
    // Displace so the first prediction is above tolerance.
    geom::Pose off = scene.ee_pose;
    off.t.x += 0.01;
    scene = sim::move_ee(scene, off);
    const control::ServoTrace tr = control::servo_loop(scene, op, ctl, rng);
    contracts = contracts && tr.iterations.size() == 2 &&
                tr.below_tolerance && tr.iterations[0].moved &&
                !tr.iterations[1].moved;
  }

  r.passed = failures == 0 && contracts;
  r.detail = fmt("%.0f/%.0f oracle trials succeeded",
                 static_cast<double>(total - failures),
                 static_cast<double>(total)) +
             (contracts ? ", servo contracts ok" : ", servo contracts FAILED");
  return r;
}

CheckResult serialization_suite(std::uint64_t seed,
                                const std::string& tmp_dir) {
  CheckResult r;
  r.name = "serialization";
  namespace fs = std::filesystem;
  fs::create_directories(tmp_dir);

  auto read_bytes = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f),
                       std::istreambuf_iterator<char>());
  };
  auto write_bytes = [](const std::string& p, const std::string& b) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  bool ok = true;
  std::string why;

  // Checkpoint round trip.
  {
    net::KeypointNetConfig cfg;
    cfg.n_points = 64;
    cfg.backbone.sa1 = {16, 0.35, 4, 8};
    cfg.backbone.sa2 = {8, 0.9, 4, 8};
    cfg.backbone.fp1_out = 8;
    cfg.backbone.fp0_out = 8;
    cfg.head_hidden = 8;
    net::KeypointNet a(cfg);
    Rng rng = Rng(seed).child(0x5E71);
    a.init(rng);
    const std::string path = (fs::path(tmp_dir) / "ck.bin").string();
    net::CheckpointMeta meta;
    meta.eval_loss_at_save = 0.125;
    meta.epochs_trained = 3;
    net::save_keypoint_net(path, a, meta);
    net::CheckpointMeta meta2;
    net::KeypointNet b = net::load_keypoint_net(path, &meta2);
    for (std::size_t p = 0; ok && p < a.params().size(); ++p)
      if (a.params()[p].tensor.data != b.params()[p].tensor.data) {
        ok = false;
        why = "checkpoint params differ after reload";
      }
    if (ok && (meta2.eval_loss_at_save != meta.eval_loss_at_save ||
               meta2.epochs_trained != meta.epochs_trained)) {
      ok = false;
      why = "checkpoint metadata differs";
    }
    // Re-save must be byte-identical.
    const std::string path2 = (fs::path(tmp_dir) / "ck2.bin").string();
    net::save_keypoint_net(path2, b, meta2);
    if (ok && read_bytes(path) != read_bytes(path2)) {
      ok = false;
      why = "checkpoint re-save is not byte-identical";
    }
    // Corruption and truncation must be rejected.
    std::string bytes = read_bytes(path);
    bytes[bytes.size() / 2] ^= 0x01;
    const std::string bad = (fs::path(tmp_dir) / "ck_bad.bin").string();
    write_bytes(bad, bytes);
    bool rejected = false;
    try {
      net::load_keypoint_net(bad, nullptr);
    } catch (const Error&) {
      rejected = true;
    }
    if (ok && !rejected) {
      ok = false;
      why = "corrupted checkpoint was accepted";
    }
    std::string cut = read_bytes(path);
    cut.resize(cut.size() - 5);
    write_bytes(bad, cut);
    rejected = false;
    try {
      net::load_keypoint_net(bad, nullptr);
    } catch (const Error&) {
      rejected = true;
    }
    if (ok && !rejected) {
      ok = false;
      why = "truncated checkpoint was accepted";
    }
  }

  // Dataset round trip (tiny clouds, no rendering needed for this check).
  if (ok) {
    Rng rng = Rng(seed).child(0xDA7A);
    std::vector<datagen::FineRecord> recs(3);
    for (datagen::FineRecord& rec : recs) {
      rec.cloud = random_cloud(16, 0.05, rng);
      rec.gt_delta_t = {rng.normal(), rng.normal(), rng.normal()};
      rec.gt_delta_r = {rng.normal(0.0, 0.1), rng.normal(0.0, 0.1),
                        rng.normal(0.0, 0.1)};
      rec.ee_pose.R = geom::rotation_about_axis(random_unit(rng),
                                                rng.uniform(-3.0, 3.0));
      rec.ee_pose.t = {rng.normal(), rng.normal(), rng.normal()};
      rec.target_pose = rec.ee_pose;
    }
    const std::string path = (fs::path(tmp_dir) / "ds.bin").string();
    datagen::save_dataset(path, recs);
    const std::vector<datagen::FineRecord> back =
        datagen::load_fine_dataset(path);
    const std::string path2 = (fs::path(tmp_dir) / "ds2.bin").string();
    datagen::save_dataset(path2, back);
    if (read_bytes(path) != read_bytes(path2)) {
      ok = false;
      why = "dataset re-save is not byte-identical";
    }
    std::string bytes = read_bytes(path);
    bytes[20] ^= 0x40;
    const std::string bad = (fs::path(tmp_dir) / "ds_bad.bin").string();
    write_bytes(bad, bytes);
    bool rejected = false;
    try {
      datagen::load_fine_dataset(bad);
    } catch (const Error&) {
      rejected = true;
    }
    if (ok && !rejected) {
      ok = false;
      why = "corrupted dataset was accepted";
    }
  }

  r.passed = ok;
  r.detail = ok ? "round trips bit-exact, damage rejected" : why;
  return r;
}

std::vector<CheckResult> run_all(std::uint64_t seed, const std::string& tmp_dir,
                                 bool flip_one_gradient) {
  std::vector<CheckResult> out;
  out.push_back(so3_suite(10000, seed));
  out.push_back(gradient_suite(3, seed, flip_one_gradient));
  out.push_back(loss_suite(2000, seed));
  out.push_back(oracle_suite(5, seed));
  out.push_back(serialization_suite(seed, tmp_dir));
  return out;
}

}  // namespace peghole::checks

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "peghole/bench.hpp"
#include "peghole/checks.hpp"
#include "peghole/config.hpp"
#include "peghole/control.hpp"
#include "peghole/datagen.hpp"
#include "peghole/errors.hpp"
#include "peghole/nn.hpp"
#include "peghole/simworld.hpp"

namespace fs = std::filesystem;
using namespace peghole;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::string seed;  // kept as text so "not given" is distinguishable
  bool oracle = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonArgs* a, bool with_oracle) {
  sub->add_option("--config", a->config_path, "key = value config file");
  sub->add_option("--seed", a->seed, "base seed (overrides config)");
  sub->add_option("--out", a->out, "output directory (overrides config)");
  if (with_oracle)
    sub->add_flag("--oracle", a->oracle,
                  "substitute exact oracle models for the networks");
  sub->add_option("overrides", a->overrides, "dotted-key=value overrides");
}

cfg::Config build_config(const CommonArgs& a) {
  cfg::Config c;
  if (!a.config_path.empty()) c.apply_file(a.config_path);
  for (const std::string& o : a.overrides) c.apply_override(o);
  if (!a.seed.empty()) c.set("seed", a.seed);
  if (!a.out.empty()) c.set("out", a.out);
  return c;
}

void echo_config(const cfg::Config& c) {
  std::printf("# effective configuration\n");
  for (const auto& [k, v] : c.entries())
    std::printf("%s = %s\n", k.c_str(), v.c_str());
  std::printf("#\n");
  std::fflush(stdout);
}

sim::DofMode dof_from(std::int64_t dof) {
  switch (dof) {
    case 3: return sim::DofMode::k3Dof;
    case 4: return sim::DofMode::k4Dof;
    case 6: return sim::DofMode::k6Dof;
    default: throw UsageError("trial.dof must be 3, 4, or 6");
  }
}

std::optional<sim::BodyShape> body_from(const std::string& name) {
  if (name == "auto") return std::nullopt;
  if (name != "cuboid1" && name != "cuboid2" && name != "cylinder" &&
      name != "pentagon")
    throw UsageError(
        "body must be auto, cuboid1, cuboid2, cylinder, or pentagon");
  return sim::body_from_name(name);
}

sim::TrialConfig trial_from(const cfg::Config& c) {
  sim::TrialConfig t;
  t.dof = dof_from(c.get_int("trial.dof"));
  t.initial_error = c.get_double("trial.initial_error");
  t.tilt_lo_deg = c.get_double("trial.tilt_lo_deg");
  t.tilt_hi_deg = c.get_double("trial.tilt_hi_deg");
  t.yaw_max_deg = c.get_double("trial.yaw_max_deg");
  t.approach_cone_deg = c.get_double("trial.approach_cone_deg");
  t.noise_sigma = c.get_double("trial.noise_sigma");
  t.body = body_from(c.get_string("trial.body"));
  return t;
}

control::ControllerConfig ctl_from(const cfg::Config& c) {
  control::ControllerConfig ctl;
  ctl.e_t = c.get_double("ctl.e_t");
  ctl.e_r = geom::deg2rad(c.get_double("ctl.e_r_deg"));
  ctl.max_iters = static_cast<int>(c.get_int("ctl.max_iters"));
  ctl.standoff = c.get_double("ctl.standoff");
  ctl.crop_radius = c.get_double("ctl.crop_radius");
  ctl.coarse_points = static_cast<int>(c.get_int("gen.coarse_points"));
  ctl.fine_points = static_cast<int>(c.get_int("gen.fine_points"));
  ctl.sensor_noise_sigma = c.get_double("trial.noise_sigma");
  return ctl;
}

void write_text(const std::string& path, const std::string& content) {
  bench::write_file(path, content);
}

void write_loss_csv(const std::string& path, const net::TrainResult& res,
                    const char* a_name, const char* b_name) {
  std::string csv = std::string("epoch,total,") + a_name + "," + b_name +
                    ",rejected_steps\n";
  char line[160];
  for (const net::EpochStats& e : res.curve) {
    std::snprintf(line, sizeof(line), "%d,%.9f,%.9f,%.9f,%d\n", e.epoch,
                  e.total, e.part_a, e.part_b, e.rejected_steps);
    csv += line;
  }
  write_text(path, csv);
}

// Loads both predictors, either oracle or from checkpoints; returns the
// controller config adjusted to the loaded input sizes.
struct Predictors {
  std::unique_ptr<net::KeypointNet> knet;
  std::unique_ptr<net::OffsetNet> onet;
  std::unique_ptr<control::KeypointPredictor> kp;
  std::unique_ptr<control::OffsetPredictor> op;
};

Predictors make_predictors(const cfg::Config& c, bool oracle,
                           control::ControllerConfig& ctl) {
  Predictors p;
  if (oracle) {
    p.kp = std::make_unique<control::OracleKeypointPredictor>();
    p.op = std::make_unique<control::OracleOffsetPredictor>(ctl.standoff);
    return p;
  }
  const std::string kpt = c.get_string("eval.kpt_checkpoint");
  const std::string off = c.get_string("eval.off_checkpoint");
  if (kpt.empty() || off.empty())
    throw UsageError(
        "eval.kpt_checkpoint and eval.off_checkpoint are required "
        "(or pass --oracle)");
  p.knet = std::make_unique<net::KeypointNet>(
      net::load_keypoint_net(kpt, nullptr));
  p.onet = std::make_unique<net::OffsetNet>(net::load_offset_net(off, nullptr));
  p.kp = std::make_unique<control::LearnedKeypointPredictor>(*p.knet);
  p.op = std::make_unique<control::LearnedOffsetPredictor>(*p.onet);
  ctl.coarse_points = p.knet->config().n_points;
  ctl.fine_points = p.onet->config().n_points;
  return p;
}

int cmd_gen_data(const cfg::Config& c) {
  const std::int64_t m = c.get_int("gen.coarse_count");
  const std::int64_t l = c.get_int("gen.fine_count");
  if (m < 1 || l < 1)
    throw UsageError("gen.coarse_count and gen.fine_count must be >= 1");

  const fs::path out(c.get_string("out"));
  fs::create_directories(out);
  const std::uint64_t seed = c.get_u64("seed");

  datagen::CoarseGenConfig cc;
  cc.trial = trial_from(c);
  cc.trial.seed = seed;
  cc.n_points = static_cast<int>(c.get_int("gen.coarse_points"));
  cc.sigma = c.get_double("gen.sigma");
  cc.train_noise_sigma = c.get_double("gen.noise_sigma");
  cc.augment = c.get_bool("gen.augment");
  Rng coarse_rng = Rng(seed).child(0xC0);
  const std::vector<datagen::CoarseRecord> coarse =
      datagen::gen_coarse(static_cast<int>(m), cc, coarse_rng);
  const std::string coarse_path = (out / "coarse.bin").string();
  datagen::save_dataset(coarse_path, coarse);

  datagen::FineGenConfig fc;
  fc.trial = cc.trial;
  fc.n_points = static_cast<int>(c.get_int("gen.fine_points"));
  fc.crop_radius = c.get_double("gen.crop_radius");
  fc.standoff = c.get_double("gen.standoff");
  fc.max_dt = c.get_double("gen.max_dt");
  fc.max_dr_deg = c.get_double("gen.max_dr_deg");
  fc.train_noise_sigma = c.get_double("gen.noise_sigma");
  Rng fine_rng = Rng(seed).child(0xF1);
  const std::vector<datagen::FineRecord> fine =
      datagen::gen_fine(static_cast<int>(l), fc, fine_rng);
  const std::string fine_path = (out / "fine.bin").string();
  datagen::save_dataset(fine_path, fine);

  auto entries = c.entries();
  datagen::write_manifest(coarse_path, entries);
  datagen::write_manifest(fine_path, entries);
  std::printf("wrote %zu coarse records -> %s\n", coarse.size(),
              coarse_path.c_str());
  std::printf("wrote %zu fine records -> %s\n", fine.size(),
              fine_path.c_str());
  return 0;
}

int cmd_train(const cfg::Config& c) {
  const std::string target = c.get_string("train.target");
  if (target != "both" && target != "coarse" && target != "fine")
    throw UsageError("train.target must be both, coarse, or fine");
  const fs::path out(c.get_string("out"));
  fs::create_directories(out);

  net::TrainConfig tc;
  tc.epochs = static_cast<int>(c.get_int("train.epochs"));
  tc.batch = static_cast<int>(c.get_int("train.batch"));
  tc.lr = c.get_double("train.lr");
  tc.lr_final_factor = c.get_double("train.lr_final_factor");
  tc.seed = c.get_u64("seed");
  tc.verbose = c.get_bool("train.verbose");

  if (target == "both" || target == "coarse") {
    const std::string data_path = c.get_string("train.coarse_data");
    if (data_path.empty()) throw UsageError("train.coarse_data is required");
    const std::vector<datagen::CoarseRecord> records =
        datagen::load_coarse_dataset(data_path);
    const std::vector<net::CoarseItem> items = datagen::to_coarse_items(records);

    net::KeypointNetConfig nc;
    nc.n_points = static_cast<int>(records[0].cloud.size());
    net::KeypointNet knet(nc);
    std::int64_t prior_epochs = 0;
    const std::string resume = c.get_string("train.resume_coarse");
    if (!resume.empty()) {
      net::CheckpointMeta meta;
      knet = net::load_keypoint_net(resume, &meta);
      prior_epochs = meta.epochs_trained;
      const double now = net::eval_coarse_loss(knet, items, tc.batch);
      std::printf(
          "resumed keypoint net: recorded eval loss %.9f, current %.9f\n",
          meta.eval_loss_at_save, now);
    } else {
      Rng rng = Rng(tc.seed).child(0x4B49);
      knet.init(rng);
    }
    const net::TrainResult res = net::train_keypoint_net(knet, items, tc);
    net::CheckpointMeta meta;
    meta.eval_loss_at_save = res.final_eval_loss;
    meta.epochs_trained = prior_epochs + tc.epochs;
    const std::string ckpt = (out / "keypoint.ckpt").string();
    net::save_keypoint_net(ckpt, knet, meta);
    write_loss_csv((out / "coarse_loss.csv").string(), res, "kpts", "map");
    std::printf("keypoint net: final eval loss %.9f -> %s\n",
                res.final_eval_loss, ckpt.c_str());
  }

  if (target == "both" || target == "fine") {
    const std::string data_path = c.get_string("train.fine_data");
    if (data_path.empty()) throw UsageError("train.fine_data is required");
    const std::vector<datagen::FineRecord> records =
        datagen::load_fine_dataset(data_path);
    const std::vector<net::FineItem> items = datagen::to_fine_items(records);

    net::OffsetNetConfig nc;
    nc.n_points = static_cast<int>(records[0].cloud.size());
    net::OffsetNet onet(nc);
    std::int64_t prior_epochs = 0;
    const std::string resume = c.get_string("train.resume_fine");
    if (!resume.empty()) {
      net::CheckpointMeta meta;
      onet = net::load_offset_net(resume, &meta);
      prior_epochs = meta.epochs_trained;
      const double now = net::eval_fine_loss(onet, items, tc.batch);
      std::printf(
          "resumed offset net: recorded eval loss %.9f, current %.9f\n",
          meta.eval_loss_at_save, now);
    } else {
      Rng rng = Rng(tc.seed).child(0x4F49);
      onet.init(rng);
    }
    const net::TrainResult res = net::train_offset_net(onet, items, tc);
    net::CheckpointMeta meta;
    meta.eval_loss_at_save = res.final_eval_loss;
    meta.epochs_trained = prior_epochs + tc.epochs;
    const std::string ckpt = (out / "offset.ckpt").string();
    net::save_offset_net(ckpt, onet, meta);
    write_loss_csv((out / "fine_loss.csv").string(), res, "trans", "rot");
    std::printf("offset net: final eval loss %.9f -> %s\n",
                res.final_eval_loss, ckpt.c_str());
  }
  return 0;
}

int cmd_eval(const cfg::Config& c, bool oracle) {
  const int trials = static_cast<int>(c.get_int("eval.trials"));
  if (trials < 1) throw UsageError("eval.trials must be >= 1");
  const fs::path out(c.get_string("out"));
  fs::create_directories(out);

  control::ControllerConfig ctl = ctl_from(c);
  const Predictors p = make_predictors(c, oracle, ctl);
  const control::PipelineOptions opt;
  const int workers = static_cast<int>(c.get_int("eval.workers"));
  const std::uint64_t seed = c.get_u64("seed");

  std::vector<int> dofs;
  for (double d : c.get_doubles("eval.dofs")) dofs.push_back(static_cast<int>(d));
  const std::vector<double> errors = c.get_doubles("eval.errors");
  const std::vector<std::string> bodies = c.get_strings("eval.bodies");

  bench::Table table;
  std::uint64_t cell = 0;
  for (int dof : dofs) {
    for (const std::string& body : bodies) {
      for (double err : errors) {
        sim::TrialConfig t = trial_from(c);
        t.dof = dof_from(dof);
        t.initial_error = err;
        t.body = body_from(body);
        const std::uint64_t cell_seed = Rng(seed).child(0xE0A1 + cell).seed();
        bench::Row row;
        row.key = {dof, body, err};
        row.stats = bench::run_cell(t, *p.kp, *p.op, ctl, opt, cell_seed,
                                    trials, workers);
        table.rows.push_back(row);
        ++cell;
      }
    }
  }

  const std::string csv = bench::to_csv(table);
  const std::string txt = bench::to_text(table);
  write_text((out / "eval.csv").string(), csv);
  write_text((out / "eval.txt").string(), txt);
  std::printf("%s", txt.c_str());
  return 0;
}

int cmd_ablate(const cfg::Config& c, bool oracle) {
  const int trials = static_cast<int>(c.get_int("eval.trials"));
  if (trials < 1) throw UsageError("eval.trials must be >= 1");
  const fs::path out(c.get_string("out"));
  fs::create_directories(out);

  control::ControllerConfig ctl = ctl_from(c);
  const Predictors p = make_predictors(c, oracle, ctl);
  const std::uint64_t seed = c.get_u64("seed");
  const int workers = static_cast<int>(c.get_int("eval.workers"));
  const sim::TrialConfig t = trial_from(c);

  struct Variant {
    const char* name;
    control::PipelineOptions opt;
  };
  const std::vector<Variant> variants = {
      {"coarse_only", {true, false, true}},
      {"fine_only", {false, true, false}},
      {"c2f_uniform_weights", {true, true, true}},
      {"c2f_no_augment", {true, true, false}},
      {"full", {true, true, false}},
  };

  std::string csv =
      "variant,dof,initial_error,trials,successes,success_rate,"
      "mean_iterations\n";
  std::string txt = "variant               success  mean_iters\n";
  char line[200];
  for (std::size_t i = 0; i < variants.size(); ++i) {
    // Same seed for every variant: identical trial worlds, different wiring.
    const std::uint64_t cell_seed = Rng(seed).child(0xAB1A).seed();
    const bench::CellStats s =
        bench::run_cell(t, *p.kp, *p.op, ctl, variants[i].opt, cell_seed,
                        trials, workers);
    std::snprintf(line, sizeof(line), "%s,%lld,%.2f,%d,%d,%.4f,%.3f\n",
                  variants[i].name,
                  static_cast<long long>(c.get_int("trial.dof")),
                  t.initial_error, s.trials, s.successes, s.success_rate,
                  s.mean_iterations);
    csv += line;
    std::snprintf(line, sizeof(line), "%-21s %.4f   %.3f\n", variants[i].name,
                  s.success_rate, s.mean_iterations);
    txt += line;
  }
  txt +=
      "note: c2f_no_augment differs from full only when its checkpoint was "
      "trained without augmentation\n";

  write_text((out / "ablate.csv").string(), csv);
  write_text((out / "ablate.txt").string(), txt);
  std::printf("%s", txt.c_str());
  return 0;
}

int cmd_bench(const cfg::Config& c, bool oracle) {
  const int trials = static_cast<int>(c.get_int("eval.trials"));
  if (trials < 1) throw UsageError("eval.trials must be >= 1");
  const fs::path out(c.get_string("out"));
  fs::create_directories(out);

  control::ControllerConfig ctl = ctl_from(c);
  const Predictors p = make_predictors(c, oracle, ctl);
  const control::PipelineOptions opt;
  const std::uint64_t seed = c.get_u64("seed");
  const int workers = static_cast<int>(c.get_int("eval.workers"));

  bench::Table table;
  std::uint64_t cell = 0;
  for (double err : c.get_doubles("eval.errors")) {
    sim::TrialConfig t = trial_from(c);
    t.initial_error = err;
    const std::uint64_t cell_seed = Rng(seed).child(0xBE7C + cell).seed();
    bench::Row row;
    row.key = {static_cast<int>(c.get_int("trial.dof")),
               c.get_string("trial.body"), err};
    row.stats =
        bench::run_cell(t, *p.kp, *p.op, ctl, opt, cell_seed, trials, workers);
    table.rows.push_back(row);
    ++cell;
  }

  write_text((out / "bench.csv").string(), bench::to_csv(table));
  write_text((out / "bench.txt").string(), bench::to_text(table));
  std::printf("%s", bench::to_text(table).c_str());
  return 0;
}

int cmd_check(const cfg::Config& c, bool inject_gradient_fault) {
  const fs::path out(c.get_string("out"));
  fs::create_directories(out);
  const std::vector<checks::CheckResult> results = checks::run_all(
      c.get_u64("seed"), (out / "check_tmp").string(), inject_gradient_fault);
  bool all = true;
  for (const checks::CheckResult& r : results) {
    std::printf("[%s] %-14s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
    all = all && r.passed;
  }
  return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine peg-in-hole visual servoing toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args, bench_args,
      check_args;
  bool inject_fault = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate datasets");
  add_common(gen, &gen_args, false);
  CLI::App* train = app.add_subcommand("train", "train the networks");
  add_common(train, &train_args, false);
  CLI::App* eval = app.add_subcommand("eval", "success-rate table");
  add_common(eval, &eval_args, true);
  CLI::App* ablate = app.add_subcommand("ablate", "pipeline-variant table");
  add_common(ablate, &ablate_args, true);
  CLI::App* bn = app.add_subcommand("bench", "servo cost vs initial error");
  add_common(bn, &bench_args, true);
  CLI::App* check = app.add_subcommand("check", "self-check property suites");
  add_common(check, &check_args, false);
  check
      ->add_flag("--inject-gradient-fault", inject_fault,
                 "negate one analytic gradient entry (the suite must fail)")
      ->group("");  // hidden; exists for exit-code tests

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const cfg::Config c = build_config(gen_args);
      echo_config(c);
      return cmd_gen_data(c);
    }
    if (train->parsed()) {
      const cfg::Config c = build_config(train_args);
      echo_config(c);
      return cmd_train(c);
    }
    if (eval->parsed()) {
      const cfg::Config c = build_config(eval_args);
      echo_config(c);
      return cmd_eval(c, eval_args.oracle);
    }
    if (ablate->parsed()) {
      const cfg::Config c = build_config(ablate_args);
      echo_config(c);
      return cmd_ablate(c, ablate_args.oracle);
    }
    if (bn->parsed()) {
      const cfg::Config c = build_config(bench_args);
      echo_config(c);
      return cmd_bench(c, bench_args.oracle);
    }
    if (check->parsed()) {
      const cfg::Config c = build_config(check_args);
      echo_config(c);
      return cmd_check(c, inject_fault);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

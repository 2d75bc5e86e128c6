#include "peghole/bench.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <thread>

#include "peghole/errors.hpp"

namespace peghole::bench {

CellStats run_cell(const sim::TrialConfig& trial_base,
                   const control::KeypointPredictor& kp,
                   const control::OffsetPredictor& op,
                   const control::ControllerConfig& ctl,
                   const control::PipelineOptions& opt, std::uint64_t base_seed,
                   int trials, int workers) {
  if (trials < 1) throw UsageError("trials must be >= 1");
  int n_workers = workers;
  if (n_workers <= 0)
    n_workers = static_cast<int>(std::thread::hardware_concurrency());
  if (n_workers < 1) n_workers = 1;
  if (n_workers > trials) n_workers = trials;

  std::vector<control::TrialResult> results(trials);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= trials) return;
      sim::TrialConfig t = trial_base;
      t.seed = base_seed ^ static_cast<std::uint64_t>(i);
      Rng rng(t.seed);
      results[i] = control::run_trial(t, kp, op, ctl, opt, rng);
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  CellStats s;
  s.trials = trials;
  double iter_sum = 0.0, time_sum = 0.0;
  for (const control::TrialResult& r : results) {
    if (r.success) ++s.successes;
    iter_sum += r.servo_iterations;
    time_sum += r.wall_time;
  }
  s.success_rate = static_cast<double>(s.successes) / trials;
  s.mean_iterations = iter_sum / trials;
  s.mean_servo_time = time_sum / trials;
  return s;
}

std::string to_csv(const Table& table) {
  std::string out =
      "dof,body,initial_error,trials,successes,success_rate,mean_iterations\n";
  char line[160];
  for (const Row& r : table.rows) {
    std::snprintf(line, sizeof(line), "%d,%s,%.2f,%d,%d,%.4f,%.3f\n",
                  r.key.dof, r.key.body.c_str(), r.key.initial_error,
                  r.stats.trials, r.stats.successes, r.stats.success_rate,
                  r.stats.mean_iterations);
    out += line;
  }
  return out;
}

std::string to_text(const Table& table) {
  std::string out =
      "dof  body       err[m]  trials  success  mean_iters  mean_time[s]\n";
  char line[160];
  for (const Row& r : table.rows) {
    std::snprintf(line, sizeof(line),
                  "%-4d %-10s %.2f    %-7d %.4f   %-11.3f %.4f\n", r.key.dof,
                  r.key.body.c_str(), r.key.initial_error, r.stats.trials,
                  r.stats.success_rate, r.stats.mean_iterations,
                  r.stats.mean_servo_time);
    out += line;
  }
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << content;
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace peghole::bench

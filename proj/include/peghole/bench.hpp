#pragma once

#include <string>
#include <vector>

#include "peghole/control.hpp"
#include "peghole/simworld.hpp"

namespace peghole::bench {

struct CellKey {
  int dof = 6;                  // 3, 4, or 6
  std::string body = "auto";    // fixed body name or "auto" (mixed per trial)
  double initial_error = 0.15;  // [m]
};

struct CellStats {
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;     // exact ratio successes/trials
  double mean_iterations = 0.0;  // servo iterations per trial
  double mean_servo_time = 0.0;  // wall seconds per trial (not in the CSV)
};

struct Row {
  CellKey key;
  CellStats stats;
};

struct Table {
  std::vector<Row> rows;
};

// Runs `trials` independent trials of one cell.  Trial i derives its whole
// random stream from seed = base_seed XOR i, so worker count and scheduling
// never change any result.  workers <= 0 picks the hardware concurrency.
CellStats run_cell(const sim::TrialConfig& trial_base,
                   const control::KeypointPredictor& kp,
                   const control::OffsetPredictor& op,
                   const control::ControllerConfig& ctl,
                   const control::PipelineOptions& opt, std::uint64_t base_seed,
                   int trials, int workers = 0);

// Deterministic CSV: header + one row per cell.  Wall time is excluded so
// the file is byte-stable across machines; it lives in the text report.
std::string to_csv(const Table& table);

// Human-readable table including mean servo wall time.
std::string to_text(const Table& table);

void write_file(const std::string& path, const std::string& content);

}  // namespace peghole::bench

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace peghole::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // one-line metric summary or the failure reason
};

// Rotation construction from keypoint triples: orthonormality, determinant,
// and axis alignment over `n` random valid triples.
CheckResult so3_suite(int n, std::uint64_t seed);

struct GradientReport {
  double max_rel_err = 0.0;
  int entries = 0;
};

// Central finite-difference validation of the reverse-mode gradients through
// a full forward + loss on a 64-point cloud, one randomly initialized
// network.  rel = |a - n| / max(|a|, |n|, 0.01); all entries must be < 1e-4.
// Entries whose secant straddles a relu or max-pool boundary at the default
// step are re-measured with smaller steps before they count as mismatches.
// `flip_one_gradient` negates one analytic entry first (mutation probe);
// a healthy check must then fail.
GradientReport gradient_check_keypoint(std::uint64_t seed,
                                       bool flip_one_gradient = false);
GradientReport gradient_check_offset(std::uint64_t seed,
                                     bool flip_one_gradient = false);

// Runs both network checks over `inits` seeds each.
CheckResult gradient_suite(int inits, std::uint64_t seed,
                           bool flip_one_gradient = false);

// Loss nonnegativity on random inputs, exact zero at ground truth, and the
// closed-form worked examples.
CheckResult loss_suite(int n_random, std::uint64_t seed);

// Oracle-driven pipeline trials (all DoF modes) must succeed every time, and
// the servo contracts must hold (zero predictor stops in one iteration).
CheckResult oracle_suite(int trials_per_mode, std::uint64_t seed);

// Dataset and checkpoint round trips are bit-exact; corrupted and truncated
// files are rejected.  Writes scratch files under `tmp_dir`.
CheckResult serialization_suite(std::uint64_t seed, const std::string& tmp_dir);

// The full battery in a fixed order.
std::vector<CheckResult> run_all(std::uint64_t seed, const std::string& tmp_dir,
                                 bool flip_one_gradient = false);

}  // namespace peghole::checks

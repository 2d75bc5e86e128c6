#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace peghole {

// SplitMix64 scrambler.  Used to decorrelate derived seeds: nearby raw seeds
// (base ^ trial_index) would otherwise produce correlated mt19937_64 streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random source.  All distributions are hand-rolled on top of
// the raw mt19937_64 output so that sequences are identical across compilers
// and standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t raw() { return eng_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).  n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return v % n;
  }

  // Standard normal via Box-Muller (no cached spare: keeps the consumption
  // pattern trivially deterministic).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Independent child stream; `tag` distinguishes siblings.
  Rng child(std::uint64_t tag) const {
    return Rng(splitmix64(seed_ ^ splitmix64(tag + 0x517cc1b727220a95ULL)));
  }

 private:
  std::mt19937_64 eng_;
  std::uint64_t seed_;
};

}  // namespace peghole

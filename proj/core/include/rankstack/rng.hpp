#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rankstack {

// Deterministic splittable RNG. All randomness in the project flows through
// this so that runs are reproducible across platforms and standard-library
// versions (std::normal_distribution is not pinned by the standard).
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ULL)) {}

  uint64_t next_u64() {
    state_ = splitmix(state_);
    return state_;
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // normal resampled until |x| <= 2*stddev
  double truncated_normal(double stddev) {
    double x = normal() * stddev;
    while (std::abs(x) > 2.0 * stddev) x = normal() * stddev;
    return x;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // derive an independent stream; hashing the tag keeps streams decorrelated
  Rng split(uint64_t tag) const {
    return Rng(splitmix(state_ ^ splitmix(tag ^ 0xd1b54a32d192ed03ULL)));
  }

  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

private:
  uint64_t state_;
};

}  // namespace rankstack

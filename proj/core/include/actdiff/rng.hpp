#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace actdiff {

/// Seeded pseudo-random stream. All stochastic code takes one of these
/// explicitly so a run is fully determined by its seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream derived from (seed, stream); used for per-query or
  /// per-window randomness that must not depend on iteration order.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  double normal();
  double normal(double mean, double stddev);
  double uniform();  // [0, 1)
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  std::size_t index(std::size_t n);  // uniform in [0, n)

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace actdiff

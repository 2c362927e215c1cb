#pragma once

#include <cstdint>
#include <random>

#include "ttm/numerics/types.hpp"

namespace ttm {

/// Deterministic random source: std::mt19937_64 for the raw stream (its output
/// sequence is fixed by the C++ standard), with uniform and normal transforms
/// implemented here because the standard library's distributions differ
/// between implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Box-Muller; caches the second variate.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Matrix normal_matrix(Index rows, Index cols, double stddev);
  Matrix uniform_matrix(Index rows, Index cols, double lo, double hi);

  /// Independent stream derived from this one (advances this generator).
  Rng split() { return Rng(next_u64()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ttm

// Counter-based deterministic random streams.
//
// A draw is a pure function of (key, counter), so the same seed yields the
// same sequence on every platform. fork() derives an independent key for a
// named purpose or an index; consumers that fork their own stream never
// perturb each other's draws.
#pragma once

#include <cstdint>
#include <string_view>

namespace stochpool {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x9E3779B97F4A7C15ULL)) {}

  Rng fork(std::string_view purpose) const;
  Rng fork(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Unbiased integer in [0, n); n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Standard normal via Box-Muller (consumes two draws).
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  Rng(std::uint64_t key, int) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace stochpool

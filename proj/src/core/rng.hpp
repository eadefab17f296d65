#pragma once

#include <cstdint>
#include <random>

namespace advlab {

/// Splittable deterministic generator.
///
/// Wraps std::mt19937_64 with hand-rolled distributions so that identical
/// seeds give identical streams on any toolchain (the standard pins the
/// engine but not the <random> distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_base_(seed), engine_(mix(seed)) {}

  /// Independent child stream; (seed, key) -> stream is a pure function of
  /// the seed this Rng was constructed with, not of how much was consumed.
  Rng split(std::uint64_t key) const {
    return Rng(seed_base_ ^ mix(key ^ 0x9e3779b97f4a7c15ull));
  }

  std::uint64_t seed() const { return seed_base_; }

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n), n >= 1.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (no spare caching: keeps streams trivially reproducible).
  double normal();

  /// Bernoulli draw.
  bool chance(double p) { return uniform01() < p; }

 private:
  static std::uint64_t mix(std::uint64_t x);
  std::uint64_t seed_base_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace advlab

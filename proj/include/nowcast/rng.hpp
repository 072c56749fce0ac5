#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace nowcast {

/// Deterministic random stream. The engine is the (standardized) mt19937_64,
/// but all real-valued transforms are implemented here instead of relying on
/// std distributions, whose output is implementation-defined. Two builds on
/// any platform draw identical sequences from the same seed.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  /// Standard normal via Box-Muller (cached second deviate).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Child stream keyed by (seed, stream). Used so parallel workers and
  /// per-sample augmentation draw from independent, reproducible sequences.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(mix64(seed ^ mix64(stream + 0x9e3779b97f4a7c15ULL)));
  }

private:
  static std::uint64_t mix64(std::uint64_t x) {  // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace nowcast

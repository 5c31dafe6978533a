#pragma once

#include <cmath>
#include <cstdint>

namespace tslc {

/// Counter-based deterministic RNG. The stream is a pure function of
/// (seed, counter), so identical seeds give identical streams on every
/// platform and independent substreams can be split off cheaply.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * ++counter_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(next_double()) * (hi - lo);
  }

  /// Standard normal via Box-Muller (two fresh draws per call, no caching).
  float normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                              std::cos(6.283185307179586 * u2));
  }

  /// Unbiased uniform integer in [0, n) via rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Derives an independent substream keyed by `stream`.
  Rng split(std::uint64_t stream) const {
    std::uint64_t z = seed_ ^ (0xD6E8FEB86659FD93ull * (stream + 0x9E3779B97F4A7C15ull));
    z = (z ^ (z >> 32)) * 0xD6E8FEB86659FD93ull;
    return Rng(z ^ (z >> 32));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace tslc

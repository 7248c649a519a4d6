#pragma once

#include <cmath>
#include <cstdint>

#include "fusseg/common.hpp"

namespace fusseg {

// Deterministic PRNG with explicit distribution code. std::mt19937 plus the
// standard <random> distributions are implementation-defined, which would
// break the bitwise reproducibility contract across toolchains; everything
// random in this project goes through this class.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // SplitMix64 step (Steele, Lea, Flood 2014).
  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n), unbiased via rejection.
  int64_t uniform_int(int64_t n) {
    require(n > 0, "Rng::uniform_int: n must be positive");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller; the spare value is cached so draws come in deterministic order.
  double normal(double mu = 0.0, double sigma = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mu + sigma * spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mu + sigma * r * std::cos(theta);
  }

  // Stream derivation: mix(seed, a, b, c) gives independent sub-streams for
  // (phantom index), (epoch, sample) etc., so parallel and serial schedules
  // draw identical values.
  static uint64_t mix(uint64_t a, uint64_t b = 0, uint64_t c = 0, uint64_t d = 0) {
    uint64_t h = a;
    for (uint64_t x : {b, c, d}) {
      h ^= x + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
      h = mix64(h);
    }
    return h;
  }

private:
  static uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

} // namespace fusseg

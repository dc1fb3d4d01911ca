#pragma once

#include <cmath>
#include <cstdint>

namespace bat {

// SplitMix64 is the single PRNG used for every seeded behavior in this project.
// Sequence draw order is part of the on-disk determinism contract for the data
// generator (see docs in synthdata.hpp and the README); do not reorder draws.
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1), 53 mantissa bits.
  double u01() { return double(next() >> 11) * 0x1.0p-53; }

  // Uniform in (0,1], safe as a log() argument.
  double u01_open0() { return double((next() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // n must be > 0. Modulo bias is irrelevant at the n used here (< 2^32).
  std::int64_t index(std::int64_t n) {
    return std::int64_t(next() % std::uint64_t(n));
  }

  // Box-Muller, two draws per value (no caching so the draw count is obvious).
  double gaussian() {
    const double u1 = u01_open0();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }
};

// Stateless hash of a 64-bit key through one SplitMix64 step. Used for
// order-free randomness (background texture, per-pixel noise).
inline std::uint64_t hash64(std::uint64_t v) { return SplitMix64(v).next(); }

inline double hash_u01(std::uint64_t v) { return double(hash64(v) >> 11) * 0x1.0p-53; }

}  // namespace bat

#ifndef BRIDGEFUSE_RANDOM_HPP_
#define BRIDGEFUSE_RANDOM_HPP_

#include <cstdint>
#include <random>

namespace bridgefuse {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from exactly one engine draw.
inline double Uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double UniformIn(Rng& rng, double lo, double hi) { return lo + (hi - lo) * Uniform01(rng); }

/// Independent stream for (seed, fold, purpose).
inline Rng DeriveRng(std::uint64_t seed, std::uint64_t fold, std::uint64_t purpose) {
  std::seed_seq seq{seed * 1000 + fold, purpose};
  return Rng(seq);
}

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_RANDOM_HPP_

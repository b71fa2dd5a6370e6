#pragma once

#include <cstdint>
#include <random>

namespace bytenmt {

/// splitmix64 step; used to derive independent seeds from (seed, tag)
/// pairs so that resumed runs reproduce the exact RNG streams.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t tag = 0) {
  return std::mt19937_64(mix_seed(seed, tag));
}

}  // namespace bytenmt

#pragma once

#include <cstdint>
#include <random>

namespace badpix {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby seed values.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix64(master ^ mix64(stream + 0x517cc1b727220a95ull));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

inline double uniform01(Rng& g) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(g);
}

inline double uniform(Rng& g, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(g);
}

inline double normal(Rng& g, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(g);
}

/// Uniform integer in [lo, hi], inclusive.
inline std::int64_t uniform_int(Rng& g, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(g);
}

}  // namespace badpix

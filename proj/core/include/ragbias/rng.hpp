#pragma once

#include <cstdint>
#include <random>

namespace ragbias {

// splitmix64 step; also used to derive independent per-task seeds from a
// master seed so parallel schedules cannot change results.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master ^ (0x9e3779b97f4a7c15ull * (stream + 1));
  return splitmix64(s);
}

// Unbiased draw in [0, n) via rejection sampling. std::uniform_int_distribution
// is not pinned by the standard; this keeps sampled collections reproducible
// across toolchains.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

}  // namespace ragbias

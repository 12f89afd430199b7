#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mensa {

using Rng = std::mt19937_64;

// Deterministic child seed for a named subsystem (splitmix64 over the
// parent seed mixed with an FNV-1a hash of the stream name).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

// Uniform draw on the open interval (0, 1).
inline double open_unit(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = 0.0;
  do {
    u = unit(rng);
  } while (u <= 0.0);
  return u;
}

}  // namespace mensa

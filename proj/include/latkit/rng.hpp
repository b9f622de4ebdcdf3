#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace latkit {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a seed with stream/counter words into an independent seed, so each
/// (run, purpose, step) gets its own generator without shared state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = splitmix64(seed);
  for (auto w : words) h = splitmix64(h ^ splitmix64(w + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> words = {}) {
  return Rng(derive_seed(seed, words));
}

// Stream tags for derive_seed.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t attack = 3;
inline constexpr std::uint64_t data = 4;
inline constexpr std::uint64_t poison = 5;
inline constexpr std::uint64_t corrupt = 6;
inline constexpr std::uint64_t eval = 7;
}  // namespace stream

}  // namespace latkit

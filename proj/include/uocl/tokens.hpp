#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace uocl {

using Tokens = std::vector<int>;

// Reserved ids; every id >= kFirstSymbol is an ordinary output symbol.
inline constexpr int kBlank = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kFirstSymbol = 3;

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent child seed for (base, salt); used so that every random
/// stream in a run is a pure function of the run seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return splitmix64(base ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

}  // namespace uocl

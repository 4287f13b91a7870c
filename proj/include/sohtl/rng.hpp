#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sohtl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream keyed by (seed, a, b). Streams do not depend on the
// order in which they are created, so worker count never changes results.
inline Rng make_stream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ splitmix64(a + 0x632be59bd9b4e019ULL));
  k = splitmix64(k ^ splitmix64(b + 0x85157af5ULL));
  return Rng(k);
}

inline Rng make_stream(std::uint64_t seed, std::string_view key, std::uint64_t b = 0) {
  return make_stream(seed, stable_hash(key), b);
}

}  // namespace sohtl

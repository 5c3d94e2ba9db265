#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace budis {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Order-sensitive mix of several 64-bit words into one key.
inline std::uint64_t mix_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (auto w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

/// FNV-1a, used to key per-unit random decisions by unit id.
constexpr std::uint64_t hash_id(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based uniform in [0,1): a pure function of the key.
constexpr double key_uniform(std::uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

/// Independent stream derived from a seed and a path of indices.
inline Rng derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t k = splitmix64(seed);
  for (auto p : path) k = splitmix64(k ^ splitmix64(p + 0x51ED27D1B3ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  return Rng(seq);
}

template <class URBG>
double uniform01(URBG& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace budis

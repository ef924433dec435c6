#pragma once

#include <cstdint>
#include <random>

namespace m3dm {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent, order-free streams from
/// (seed, index) tuples.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(mix64(a) ^ b);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept {
  return mix64(mix64(a, b) ^ c);
}

/// Maps a 64-bit hash to [0, 1) using the top 53 bits.
constexpr double unit_interval(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Per-sample generator: seed = dataset_seed XOR sample_index.
inline Rng sample_rng(std::uint64_t dataset_seed, std::uint64_t index) {
  return Rng(dataset_seed ^ index);
}

}  // namespace m3dm

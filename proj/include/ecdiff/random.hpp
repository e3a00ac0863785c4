#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "ecdiff/tensor.hpp"

namespace ecdiff {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for a named random substream ("init_noise", "degradation", ...)
/// derived from the experiment seed, optionally indexed (e.g. per prompt).
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ fnv1a(name)) + index);
}

inline std::mt19937_64 make_substream(std::uint64_t seed,
                                      std::string_view name,
                                      std::uint64_t index = 0) {
  return std::mt19937_64(substream_seed(seed, name, index));
}

/// Uniform value in [-1, 1] from a counter-based hash; stable across
/// platforms, unlike std:: distributions.
inline double hashed_unit(std::uint64_t key, std::uint64_t i, std::uint64_t j) {
  std::uint64_t h = splitmix64(splitmix64(key ^ splitmix64(i)) + j);
  double u = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
  return 2.0 * u - 1.0;
}

inline Tensor standard_normal(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace ecdiff

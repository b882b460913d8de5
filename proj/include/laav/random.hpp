#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace laav::rng {

// All randomness in the toolkit goes through std::mt19937_64, whose output
// sequence is fixed by the C++ standard. The standard distributions and
// std::shuffle are implementation-defined, so index draws and shuffles are
// implemented here explicitly to keep results identical across toolchains.

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// SplitMix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return mix(mix(seed) ^ fnv1a(stream));
}

using Engine = std::mt19937_64;

/// Uniform integer in [0, n). Rejects draws below 2^64 mod n so the
/// remaining range is an exact multiple of n.
inline std::uint64_t uniform_below(Engine& eng, std::uint64_t n) {
  const std::uint64_t threshold = (0 - n) % n;
  std::uint64_t x;
  do {
    x = eng();
  } while (x < threshold);
  return x % n;
}

/// Uniform real in [0, 1) from the top 53 bits.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller.
inline double normal(Engine& eng) {
  double u1 = uniform01(eng);
  while (u1 <= 0.0) u1 = uniform01(eng);
  const double u2 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates shuffle (Durstenfeld, descending index).
template <class T>
void shuffle(std::span<T> items, Engine& eng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(eng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace laav::rng

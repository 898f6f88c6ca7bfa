#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace nola {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent sub-seeds from (seed, stream).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// 64-bit FNV-1a, chainable through `state`.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t state = kFnvOffset) {
  for (std::byte b : bytes) {
    state ^= static_cast<std::uint64_t>(b);
    state *= kFnvPrime;
  }
  return state;
}

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t state = kFnvOffset) {
  return fnv1a(std::as_bytes(std::span(text.data(), text.size())), state);
}

template <typename T>
std::uint64_t fnv1a_values(std::span<const T> values, std::uint64_t state = kFnvOffset) {
  return fnv1a(std::as_bytes(values), state);
}

}  // namespace nola

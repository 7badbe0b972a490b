#pragma once

#include <cstdint>
#include <string_view>

namespace ugl {

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Named sub-seed of a parent seed ("synth", "train.init", ...).
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view stage) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return mix64(parent ^ mix64(h));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) { return mix64(parent ^ mix64(index + 1)); }

}  // namespace ugl

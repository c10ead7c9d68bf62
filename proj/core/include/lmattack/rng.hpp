#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lmattack {

/// Seed of the named stream split off `root`. Streams with different names
/// are independent, so changing one protocol never shifts another.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  std::uint64_t z = root ^ h;  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_stream(std::uint64_t root, std::string_view stream) {
  return std::mt19937_64(derive_seed(root, stream));
}

}  // namespace lmattack

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace osal {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent streams from (seed, tag).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return mix64(mix64(seed) ^ (tag * 0xd1b54a32d192ed03ULL));
}

/// Uniform in [0,1) from a hashed key; 53 mantissa bits.
constexpr double hash_unit(std::uint64_t key) noexcept {
  return static_cast<double>(mix64(key) >> 11) * 0x1.0p-53;
}

/// Unbiased draw in [0, n) by rejection; independent of the standard library's
/// distribution implementations.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Moves a uniform sample of `k` elements to the front of `items` (partial Fisher-Yates).
template <typename T>
void partial_shuffle(std::vector<T>& items, std::size_t k, Rng& rng) {
  const std::size_t n = items.size();
  for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(items[i], items[j]);
  }
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace osal

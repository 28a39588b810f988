#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "bspml/error.hpp"

namespace bspml {

using Rng = std::mt19937_64;

// Derives an independent seed for a named sub-stream (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Uniform integer in [0, n).
template <class URBG>
std::size_t uniform_index(std::size_t n, URBG& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

// k distinct positions of [0, n), uniformly chosen, in draw order
// (partial Fisher-Yates).
template <class URBG>
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, URBG& rng) {
  detail::require(k <= n, "cannot draw " + std::to_string(k) + " of " + std::to_string(n) +
                              " items without replacement");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, n - 1);
    std::swap(pool[i], pool[dist(rng)]);
  }
  pool.resize(k);
  return pool;
}

// Picks k distinct elements of `items` uniformly.
template <class T, class URBG>
std::vector<T> choose(const std::vector<T>& items, std::size_t k, URBG& rng) {
  auto pos = sample_without_replacement(items.size(), k, rng);
  std::vector<T> out;
  out.reserve(k);
  for (auto p : pos) out.push_back(items[p]);
  return out;
}

}  // namespace bspml

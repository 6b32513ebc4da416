// SPDX-License-Identifier: Apache-2.0
#include "qcomm/rng.hpp"

#include <numeric>
#include <unordered_set>

#include "qcomm/errors.hpp"

namespace qcomm {
namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::string_view stream)
    : seed_(seed), stream_(stream), key_(mix64(mix64(seed) ^ fnv1a(stream))) {}

Rng::Rng(std::uint64_t seed, std::string stream, std::uint64_t key)
    : seed_(seed), stream_(std::move(stream)), key_(key) {}

Rng Rng::split(std::string_view label) const {
  return Rng(seed_, stream_ + "/" + std::string(label), mix64(key_ ^ fnv1a(label)));
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(seed_, stream_ + "/#" + std::to_string(index), mix64(key_ + mix64(index ^ 0x5851F42D4C957F2DULL)));
}

std::uint64_t Rng::next_u64() { return mix64(key_ ^ mix64(counter_++)); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ContractError("Rng::below(0)");
  // Lemire's nearly-divisionless method.
  const std::uint64_t range = n;
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * range;
  std::uint64_t low = static_cast<std::uint64_t>(m);
  if (low < range) {
    const std::uint64_t threshold = -range % range;
    while (low < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * range;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::size_t>(m >> 64);
}

Tensor Rng::uniform(const Shape& shape) { return uniform(shape, 0.0, 1.0); }

Tensor Rng::uniform(const Shape& shape, double low, double high) {
  Tensor t(shape);
  for (double& v : t.data()) v = low + (high - low) * uniform();
  return t;
}

std::vector<std::size_t> Rng::choice(std::size_t n, std::size_t k, bool without_replacement) {
  std::vector<std::size_t> out;
  out.reserve(k);
  if (!without_replacement) {
    if (n == 0 && k > 0) throw ContractError("choice from an empty range");
    for (std::size_t i = 0; i < k; ++i) out.push_back(below(n));
    return out;
  }
  if (k > n) {
    throw ContractError("choice: cannot draw " + std::to_string(k) + " distinct indices from " + std::to_string(n));
  }
  if (k * 4 < n) {
    // Floyd's algorithm; O(k) memory.
    std::unordered_set<std::size_t> seen;
    seen.reserve(k * 2);
    for (std::size_t j = n - k; j < n; ++j) {
      const std::size_t t = below(j + 1);
      if (seen.insert(t).second) {
        out.push_back(t);
      } else {
        seen.insert(j);
        out.push_back(j);
      }
    }
    return out;
  }
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + below(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace qcomm

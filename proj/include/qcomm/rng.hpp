// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qcomm/tensor.hpp"

namespace qcomm {

/// Counter-based generator. A stream is identified by (seed, label); draw i is a
/// pure function of (key, i), so streams never interfere and results do not
/// depend on platform or standard-library implementation.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream);

  /// Child stream whose key is derived from this stream's key and `label`.
  /// Does not consume draws from the parent.
  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on the open interval (0, 1).
  double uniform_open();
  /// Uniform integer in [0, n). Unbiased.
  std::size_t below(std::size_t n);

  Tensor uniform(const Shape& shape);
  Tensor uniform(const Shape& shape, double low, double high);

  /// k indices from [0, n). Without replacement the result is k distinct indices.
  std::vector<std::size_t> choice(std::size_t n, std::size_t k, bool without_replacement);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  const std::string& stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t seed, std::string stream, std::uint64_t key);

  std::uint64_t seed_;
  std::string stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace qcomm

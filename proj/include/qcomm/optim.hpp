// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "qcomm/autograd.hpp"

namespace qcomm {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are bound to a ParamSet by position.
class Adam {
 public:
  Adam(const ParamSet& params, AdamOptions options);

  /// Applies one update and zeroes every gradient. Throws ContractError if a
  /// parameter has no gradient from the last backward pass.
  void step(ParamSet& params);

  std::uint64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t step_ = 0;
};

}  // namespace qcomm

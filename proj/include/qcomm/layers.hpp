// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "qcomm/autograd.hpp"
#include "qcomm/rng.hpp"

namespace qcomm {

/// Glorot-uniform matrix of shape [fan_in x fan_out].
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Fully connected layer y = x W + b, W stored as [in x out].
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Var operator()(Tape& tape, Var x) const;
  Tensor operator()(const Tensor& x) const;

  std::size_t in_features() const;
  std::size_t out_features() const;

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Gated recurrent unit. Gate blocks are laid out as [reset | update | candidate].
class Gru {
 public:
  Gru() = default;
  Gru(ParamSet& params, const std::string& name, std::size_t input, std::size_t hidden, Rng& rng);

  /// One step: returns the next hidden state [b x hidden].
  Var step(Tape& tape, Var state, Var input) const;

  std::size_t input_size() const;
  std::size_t hidden_size() const;

 private:
  Parameter* w_ih_ = nullptr;
  Parameter* w_hh_ = nullptr;
  Parameter* b_ih_ = nullptr;
  Parameter* b_hh_ = nullptr;
};

/// Functional GRU step over explicit parameter values. Used by Gru::step and by
/// tests that need to perturb the weights directly.
Var gru_step(Var state, Var input, Var w_ih, Var w_hh, Var b_ih, Var b_hh);

}  // namespace qcomm

// SPDX-License-Identifier: Apache-2.0
#include "qcomm/layers.hpp"

#include <cmath>

#include "qcomm/errors.hpp"

namespace qcomm {

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.uniform({fan_in, fan_out}, -limit, limit);
}

Linear::Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias) {
  if (in == 0 || out == 0) throw ConfigError("linear layer '" + name + "' needs positive sizes");
  Rng stream = rng.split(name);
  weight_ = &params.add(name + ".weight", glorot_uniform(in, out, stream));
  if (bias) bias_ = &params.add(name + ".bias", Tensor({out}, 0.0));
}

Var Linear::operator()(Tape& tape, Var x) const {
  Var y = matmul(x, tape.parameter(*weight_));
  return bias_ ? add_row(y, tape.parameter(*bias_)) : y;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight_->value);
  if (bias_) {
    const auto b = bias_->value.data();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    }
  }
  return y;
}

std::size_t Linear::in_features() const { return weight_->value.dim(0); }
std::size_t Linear::out_features() const { return weight_->value.dim(1); }

Gru::Gru(ParamSet& params, const std::string& name, std::size_t input, std::size_t hidden, Rng& rng) {
  if (input == 0 || hidden == 0) throw ConfigError("GRU '" + name + "' needs positive sizes");
  Rng stream = rng.split(name);
  Tensor w_ih({input, 3 * hidden});
  Tensor w_hh({hidden, 3 * hidden});
  // Each gate block is initialized as its own [in x hidden] matrix.
  for (std::size_t gate = 0; gate < 3; ++gate) {
    const Tensor a = glorot_uniform(input, hidden, stream);
    const Tensor b = glorot_uniform(hidden, hidden, stream);
    for (std::size_t r = 0; r < input; ++r)
      for (std::size_t c = 0; c < hidden; ++c) w_ih.at(r, gate * hidden + c) = a.at(r, c);
    for (std::size_t r = 0; r < hidden; ++r)
      for (std::size_t c = 0; c < hidden; ++c) w_hh.at(r, gate * hidden + c) = b.at(r, c);
  }
  w_ih_ = &params.add(name + ".w_ih", std::move(w_ih));
  w_hh_ = &params.add(name + ".w_hh", std::move(w_hh));
  b_ih_ = &params.add(name + ".b_ih", Tensor({3 * hidden}, 0.0));
  b_hh_ = &params.add(name + ".b_hh", Tensor({3 * hidden}, 0.0));
}

Var Gru::step(Tape& tape, Var state, Var input) const {
  return gru_step(state, input, tape.parameter(*w_ih_), tape.parameter(*w_hh_), tape.parameter(*b_ih_),
                  tape.parameter(*b_hh_));
}

std::size_t Gru::input_size() const { return w_ih_->value.dim(0); }
std::size_t Gru::hidden_size() const { return w_hh_->value.dim(0); }

Var gru_step(Var state, Var input, Var w_ih, Var w_hh, Var b_ih, Var b_hh) {
  const std::size_t h = w_hh.value().dim(0);
  if (state.value().rank() != 2 || input.value().rank() != 2) throw DimensionError("gru_step: state and input must be matrices");
  if (state.value().rows() != input.value().rows()) {
    throw DimensionError("gru_step: batch mismatch " + shape_string(state.shape()) + " vs " + shape_string(input.shape()));
  }
  if (state.value().cols() != h) throw DimensionError("gru_step: state width " + std::to_string(state.value().cols()) + " vs hidden " + std::to_string(h));
  Var gi = add_row(matmul(input, w_ih), b_ih);
  Var gh = add_row(matmul(state, w_hh), b_hh);
  Var reset = sigmoid(add(slice_cols(gi, 0, h), slice_cols(gh, 0, h)));
  Var update = sigmoid(add(slice_cols(gi, h, h), slice_cols(gh, h, h)));
  Var candidate = tanh(add(slice_cols(gi, 2 * h, h), mul(reset, slice_cols(gh, 2 * h, h))));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return add(candidate, mul(update, sub(state, candidate)));
}

}  // namespace qcomm

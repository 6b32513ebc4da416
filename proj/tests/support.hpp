// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qcomm/autograd.hpp"
#include "qcomm/rng.hpp"

namespace qcomm::testing {

using Forward = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double worst = 0.0;        // largest norm-wise relative error over inputs
  std::size_t worst_input = 0;
};

inline double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// ||analytic - numeric|| / max(||analytic||, ||numeric||). Gradients whose
/// norms are both below `floor` count as zero and agree.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-8) {
  std::vector<double> diff(numeric.size());
  for (std::size_t i = 0; i < numeric.size(); ++i) diff[i] = analytic[i] - numeric[i];
  const double denom = std::max(l2(analytic), l2(numeric));
  return denom <= floor ? 0.0 : l2(diff) / denom;
}

// Scalar objective: the forward output itself when scalar, otherwise its dot
// product with a fixed random projection.
inline double objective(const Forward& f, const std::vector<Tensor>& inputs, const Tensor* projection) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Tensor& out = f(tape, vars).value();
  if (!projection) return out.item();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * (*projection)[i];
  return s;
}

/// Compares tape gradients with central differences (step h) for every input.
/// Error per input is relative_error(analytic, numeric).
inline GradCheckResult grad_check(std::vector<Tensor> inputs, const Forward& f, Rng& rng, double h = 1e-5) {
  Tensor probe_out;
  {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    probe_out = f(tape, vars).value();
  }
  std::optional<Tensor> projection;
  if (probe_out.size() != 1) projection = rng.uniform(probe_out.shape(), -1.0, 1.0);
  const Tensor* proj = projection ? &*projection : nullptr;

  ParamSet params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.add("in" + std::to_string(i), inputs[i]);
  {
    Tape tape(true);
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(*p));
    Var out = f(tape, vars);
    Var loss = proj ? sum(mul(out, tape.constant(*proj))) : out;
    tape.backward(loss);
  }

  GradCheckResult result;
  std::size_t k = 0;
  for (auto& p : params) {
    Tensor numeric(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = objective(f, inputs, proj);
      inputs[k][i] = saved - h;
      const double down = objective(f, inputs, proj);
      inputs[k][i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const Tensor& analytic = p->grad.size() ? p->grad : Tensor(inputs[k].shape());
    const double err = relative_error(analytic.data(), numeric.data());
    if (err > result.worst) {
      result.worst = err;
      result.worst_input = k;
    }
    ++k;
  }
  return result;
}

}  // namespace qcomm::testing

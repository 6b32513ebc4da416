// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qcomm/tensor.hpp"

namespace qcomm {

/// A named learnable tensor together with its gradient buffer.
class Parameter {
 public:
  Parameter(std::string name, Tensor value);

  const std::string& name() const { return name_; }
  void zero_grad();

  Tensor value;
  Tensor grad;
  // Set by Tape::backward for every parameter recorded on the tape.
  bool has_grad = false;

 private:
  std::string name_;
};

/// Ordered collection of parameters with stable addresses.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Parameter& add(std::string name, Tensor value);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  void zero_grad();

  /// Copies values from a set with identical names and shapes.
  void assign_values(const ParamSet& other);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive operations and replays their backward closures in
/// reverse order. A tape supports exactly one backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool grad_enabled = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& p);

  /// Appends an operation. `fn` is kept only when some input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op_name);

  void backward(Var loss);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient accumulated so far, or nullptr when nothing reached `v`.
  const Tensor* grad(Var v) const;
  /// Adds `g` into the gradient of `v` (no-op for values that need no gradient).
  void accumulate(Var v, const Tensor& g);
  /// Mutable gradient buffer of `v`, zero-initialized on first use.
  Tensor* grad_buffer(Var v);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  /// Node ids in the order the last backward pass visited them.
  const std::vector<std::size_t>& backward_order() const { return backward_order_; }

 private:
  struct Node {
    // Empty for parameter nodes, which read Parameter::value directly.
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
    const char* op = "";
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> backward_order_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

// Differentiable primitives. All inputs must live on the same tape.
Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// x[r, :] + bias for every row r.
Var add_row(Var x, Var bias);
Var sigmoid(Var x);
Var tanh(Var x);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var sum(Var x);
Var softmax_rows(Var x);
/// Mean over rows of -log softmax(logits)[row, target[row]].
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets);
/// out[i, j] = <z[i, :], pool[index[i * n + j], :]> for a [b x n] output.
Var gather_scores(Var z, Var pool, std::span<const std::size_t> index, std::size_t n);
/// Forward value `forward`, backward passes the upstream gradient to `x` unchanged.
Var straight_through(Var x, Tensor forward);

// Plain (tape-free) helpers shared by the differentiable ops and inference code.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

}  // namespace qcomm

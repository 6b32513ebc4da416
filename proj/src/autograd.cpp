// SPDX-License-Identifier: Apache-2.0
#include "qcomm/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "qcomm/errors.hpp"

namespace qcomm {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
}

Tape* common_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) throw ContractError("operands belong to different tapes");
  return a.tape();
}

template <typename F>
Var unary_map(Var x, F f, const char* op, std::function<void(Tape&, const Tensor&, const Tensor&, Tensor&)> grad_fn) {
  Tensor out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  const std::size_t out_id = x.tape()->size();
  return x.tape()->record(
      std::move(out), {x},
      [x, out_id, grad_fn](Tape& tape, const Tensor& g) {
        Tensor* gx = tape.grad_buffer(x);
        if (gx) grad_fn(tape, tape.value(Var(&tape, out_id)), g, *gx);
      },
      op);
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter / ParamSet

Parameter::Parameter(std::string name, Tensor v) : value(std::move(v)), grad(value.shape()), name_(std::move(name)) {}

void Parameter::zero_grad() {
  grad.fill(0.0);
  has_grad = false;
}

ParamSet::ParamSet(const ParamSet& other) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    ParamSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParamSet::add(std::string name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

Parameter* ParamSet::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name() == name) return p.get();
  return nullptr;
}

const Parameter* ParamSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name() == name) return p.get();
  return nullptr;
}

Parameter& ParamSet::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

const Parameter& ParamSet::get(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

std::size_t ParamSet::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParamSet::assign_values(const ParamSet& other) {
  if (other.size() != size()) throw DimensionError("parameter sets differ in size");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& src = *other.params_[i];
    Parameter& dst = *params_[i];
    if (src.name() != dst.name()) throw DimensionError("parameter name mismatch: " + src.name() + " vs " + dst.name());
    require_same_shape(dst.value, src.value, dst.name().c_str());
    dst.value = src.value;
  }
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->value(*this);
}

Tape::Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

Tape::Node& Tape::node(Var v) {
  if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id()];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id()];
}

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  require_finite(p.value, p.name().c_str());
  Node n;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  n.op = "parameter";
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op_name) {
  if (consumed_) throw ContractError("recording on a tape after backward()");
  require_finite(value, op_name);
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& in : inputs) needs = needs || node(in).requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  n.op = op_name;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.param ? n.param->value : n.value;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const Tensor* Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

Tensor* Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.param ? n.param->value.shape() : n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Tensor* buf = grad_buffer(v);
  if (!buf) return;
  require_same_shape(*buf, g, "gradient accumulation");
  auto dst = buf->data();
  const auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw ContractError("backward() on a tape recorded without gradients");
  if (consumed_) throw ContractError("backward() called twice on the same tape");
  consumed_ = true;
  Node& root = node(loss);
  if (value(loss).size() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_string(value(loss).shape()));
  backward_order_.clear();
  if (root.requires_grad) {
    root.grad = Tensor(value(loss).shape(), 1.0);
    root.has_grad = true;
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    backward_order_.push_back(i);
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0);
      if (n.has_grad) {
        require_finite(n.grad, p.name().c_str());
        auto dst = p.grad.data();
        const auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
      p.has_grad = true;
      continue;
    }
    if (!n.has_grad || !n.backward) continue;
    require_finite(n.grad, n.op);
    n.backward(*this, n.grad);
    n.backward = nullptr;
  }
}

// ---------------------------------------------------------------------------
// Plain kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  Tensor out({a.rows(), b.rows()});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - m);
      z += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable ops

Var matmul(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  return tape->record(
      matmul(a.value(), b.value()), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_buffer(a)) as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(t.value(b)).transpose();
        if (Tensor* gb = t.grad_buffer(b)) as_matrix(*gb).noalias() += as_matrix(t.value(a)).transpose() * as_matrix(g);
      },
      "matmul");
}

Var matmul_nt(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  return tape->record(
      matmul_nt(a.value(), b.value()), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_buffer(a)) as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(t.value(b));
        if (Tensor* gb = t.grad_buffer(b)) as_matrix(*gb).noalias() += as_matrix(g).transpose() * as_matrix(t.value(a));
      },
      "matmul_nt");
}

Var add(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return tape->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
      },
      "add");
}

Var sub(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return tape->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        if (Tensor* gb = t.grad_buffer(b)) {
          auto d = gb->data();
          const auto s = g.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
        }
      },
      "sub");
}

Var mul(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return tape->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        const auto gs = g.data();
        if (Tensor* ga = t.grad_buffer(a)) {
          const auto bv = t.value(b).data();
          auto d = ga->data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i] * bv[i];
        }
        if (Tensor* gb = t.grad_buffer(b)) {
          const auto av = t.value(a).data();
          auto d = gb->data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i] * av[i];
        }
      },
      "mul");
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape()->record(
      std::move(out), {x},
      [x, factor](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_buffer(x)) {
          auto d = gx->data();
          const auto s = g.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
        }
      },
      "scale");
}

Var add_row(Var x, Var bias) {
  Tape* tape = common_tape(x, bias);
  const std::size_t c = x.value().cols();
  if (bias.value().size() != c) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  }
  Tensor out = x.value();
  const auto bv = bias.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < c; ++j) row[j] += bv[j];
  }
  return tape->record(
      std::move(out), {x, bias},
      [x, bias](Tape& t, const Tensor& g) {
        t.accumulate(x, g);
        if (Tensor* gb = t.grad_buffer(bias)) {
          auto d = gb->data();
          for (std::size_t r = 0; r < g.rows(); ++r) {
            const auto row = g.row(r);
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += row[j];
          }
        }
      },
      "add_row");
}

Var sigmoid(Var x) {
  return unary_map(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, "sigmoid",
      [](Tape&, const Tensor& y, const Tensor& g, Tensor& gx) {
        const auto yv = y.data();
        const auto gs = g.data();
        auto d = gx.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i] * yv[i] * (1.0 - yv[i]);
      });
}

Var tanh(Var x) {
  return unary_map(
      x, [](double v) { return std::tanh(v); }, "tanh",
      [](Tape&, const Tensor& y, const Tensor& g, Tensor& gx) {
        const auto yv = y.data();
        const auto gs = g.data();
        auto d = gx.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gs[i] * (1.0 - yv[i] * yv[i]);
      });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& in = x.value();
  require_matrix(in, "slice_cols");
  if (begin + count > in.cols()) throw DimensionError("slice_cols: range exceeds " + shape_string(in.shape()));
  Tensor out({in.rows(), count});
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto src = in.row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return x.tape()->record(
      std::move(out), {x},
      [x, begin, count](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_buffer(x)) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto dst = gx->row(r).subspan(begin, count);
            const auto src = g.row(r);
            for (std::size_t j = 0; j < count; ++j) dst[j] += src[j];
          }
        }
      },
      "slice_cols");
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->record(
      Tensor::scalar(s), {x},
      [x](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const double gv = g[0];
          for (double& d : gx->data()) d += gv;
        }
      },
      "sum");
}

Var softmax_rows(Var x) {
  Tensor out = softmax_rows(x.value());
  const std::size_t out_id = x.tape()->size();
  return x.tape()->record(
      std::move(out), {x},
      [x, out_id](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        if (!gx) return;
        const Tensor& y = t.value(Var(&t, out_id));
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const auto yr = y.row(r);
          const auto gr = g.row(r);
          double dot = 0.0;
          for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
          auto d = gx->row(r);
          for (std::size_t j = 0; j < yr.size(); ++j) d[j] += yr[j] * (gr[j] - dot);
        }
      },
      "softmax");
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& z = logits.value();
  require_matrix(z, "softmax_cross_entropy");
  const std::size_t b = z.rows();
  const std::size_t n = z.cols();
  if (targets.size() != b) throw DimensionError("softmax_cross_entropy: one target per row required");
  for (std::size_t t : targets) {
    if (t >= n) throw ContractError("softmax_cross_entropy: target index " + std::to_string(t) + " out of range [0, " + std::to_string(n) + ")");
  }
  Tensor probs = softmax_rows(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const auto row = z.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    loss += (m + std::log(s)) - row[targets[r]];
  }
  loss /= static_cast<double>(b);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return logits.tape()->record(
      Tensor::scalar(loss), {logits},
      [logits, probs = std::move(probs), tgt = std::move(tgt)](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(logits);
        if (!gx) return;
        const double k = g[0] / static_cast<double>(probs.rows());
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          const auto p = probs.row(r);
          auto d = gx->row(r);
          for (std::size_t j = 0; j < p.size(); ++j) d[j] += k * p[j];
          d[tgt[r]] -= k;
        }
      },
      "softmax_cross_entropy");
}

Var gather_scores(Var z, Var pool, std::span<const std::size_t> index, std::size_t n) {
  Tape* tape = common_tape(z, pool);
  const Tensor& zv = z.value();
  const Tensor& pv = pool.value();
  require_matrix(zv, "gather_scores");
  require_matrix(pv, "gather_scores");
  const std::size_t b = zv.rows();
  const std::size_t h = zv.cols();
  if (pv.cols() != h) throw DimensionError("gather_scores: pool width " + std::to_string(pv.cols()) + " vs " + std::to_string(h));
  if (index.size() != b * n) throw DimensionError("gather_scores: index list must hold rows x n entries");
  for (std::size_t k : index)
    if (k >= pv.rows()) throw DimensionError("gather_scores: pool index out of range");
  Tensor out({b, n});
  for (std::size_t i = 0; i < b; ++i) {
    const auto zi = zv.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto u = pv.row(index[i * n + j]);
      double s = 0.0;
      for (std::size_t k = 0; k < h; ++k) s += zi[k] * u[k];
      out.at(i, j) = s;
    }
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape->record(
      std::move(out), {z, pool},
      [z, pool, idx = std::move(idx), n](Tape& t, const Tensor& g) {
        const Tensor& zv = t.value(z);
        const Tensor& pv = t.value(pool);
        const std::size_t h = zv.cols();
        Tensor* gz = t.grad_buffer(z);
        Tensor* gp = t.grad_buffer(pool);
        for (std::size_t i = 0; i < zv.rows(); ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g.at(i, j);
            const std::size_t row = idx[i * n + j];
            if (gz) {
              auto d = gz->row(i);
              const auto u = pv.row(row);
              for (std::size_t k = 0; k < h; ++k) d[k] += gij * u[k];
            }
            if (gp) {
              auto d = gp->row(row);
              const auto zi = zv.row(i);
              for (std::size_t k = 0; k < h; ++k) d[k] += gij * zi[k];
            }
          }
        }
      },
      "gather_scores");
}

Var straight_through(Var x, Tensor forward) {
  require_same_shape(x.value(), forward, "straight_through");
  return x.tape()->record(
      std::move(forward), {x}, [x](Tape& t, const Tensor& g) { t.accumulate(x, g); }, "straight_through");
}

}  // namespace qcomm

// SPDX-License-Identifier: Apache-2.0
#include "qcomm/optim.hpp"

#include <cmath>

#include "qcomm/errors.hpp"

namespace qcomm {

Adam::Adam(const ParamSet& params, AdamOptions options) : options_(options) {
  if (!(options.learning_rate > 0.0)) throw ConfigError("Adam: learning rate must be positive");
  for (const auto& p : params) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void Adam::step(ParamSet& params) {
  if (params.size() != m_.size()) throw DimensionError("Adam: parameter set changed size");
  std::size_t i = 0;
  for (const auto& p : params) {
    if (!p->has_grad) throw ContractError("Adam: parameter '" + p->name() + "' has no gradient");
    require_same_shape(p->value, m_[i], p->name().c_str());
    ++i;
  }
  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  i = 0;
  for (auto& p : params) {
    auto w = p->value.data();
    const auto g = p->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
    require_finite(p->value, p->name().c_str());
    p->zero_grad();
    ++i;
  }
}

}  // namespace qcomm

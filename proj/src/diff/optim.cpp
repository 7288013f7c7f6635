#include "chaosemu/diff/optim.hpp"

#include <cmath>

#include "chaosemu/error.hpp"

namespace chaosemu::diff {

void AdamW::step(std::vector<Var>& params) {
  for (const Var& p : params) {
    if (!p.has_grad()) throw MissingGradientError("AdamW: parameter '" + p.name() + "' has no gradient");
  }
  if (m_.empty()) {
    for (const Var& p : params) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }
  if (m_.size() != params.size()) throw ConfigError("AdamW: parameter list changed between steps");

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate, wd = config_.weight_decay;
  for (std::size_t j = 0; j < params.size(); ++j) {
    Tensor& w = params[j].mutable_value();
    const Tensor& g = params[j].grad();
    Tensor& m = m_[j];
    Tensor& v = v_[j];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + wd * w[i]);
    }
  }
}

void zero_grad(std::vector<Var>& params) {
  for (Var& p : params) p.zero_grad();
}

}  // namespace chaosemu::diff

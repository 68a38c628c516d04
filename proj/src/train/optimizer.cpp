#include "demure/train/optimizer.hpp"

#include <cmath>

#include "demure/errors.hpp"

namespace demure::train {

OptimizerState OptimizerState::zeros_like(const model::EncoderParams& params) {
  OptimizerState s;
  for (const auto& n : params.named()) {
    s.m.emplace_back(n.array->shape(), std::vector<double>(n.array->size(), 0.0));
    s.v.emplace_back(n.array->shape(), std::vector<double>(n.array->size(), 0.0));
  }
  return s;
}

void adam_step(model::EncoderParams& params, const std::vector<nd::Array>& grads,
               OptimizerState& state, const AdamSettings& s) {
  auto named = params.named();
  if (grads.size() != named.size() || state.m.size() != named.size() ||
      state.v.size() != named.size()) {
    throw ContractError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (!grads[i].same_shape(*named[i].array) || !state.m[i].same_shape(*named[i].array)) {
      throw ContractError("adam_step: shape mismatch for " + named[i].name);
    }
    const std::size_t bad = grads[i].first_non_finite();
    if (bad != grads[i].size()) {
      throw NumericError("non-finite gradient for parameter " + named[i].name + " at entry " +
                         std::to_string(bad));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto theta = named[i].array->data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k] + 2.0 * s.l2_rate * theta[k];
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * gk;
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

}  // namespace demure::train

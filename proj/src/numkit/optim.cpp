#include "lasium/optim.hpp"

#include <cmath>

namespace lasium::numkit {

void apply_update(std::vector<Tensor>& params, const GradientSet& grads, OptimizerState& state,
                  const OptimizerConfig& config) {
  if (grads.size() != params.size()) throw DimensionError("optimizer: gradient count does not match parameters");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (grads[t].shape() != params[t].shape()) throw DimensionError("optimizer: gradient shape mismatch");
  }

  std::vector<Tensor> next = params;
  OptimizerState next_state = state;
  if (config.kind == OptimizerKind::sgd) {
    for (std::size_t t = 0; t < next.size(); ++t)
      for (std::size_t i = 0; i < next[t].size(); ++i) next[t][i] -= config.lr * grads[t][i];
    ++next_state.step;
  } else {
    if (next_state.m.empty()) {
      next_state.m = zeros_like(params);
      next_state.v = zeros_like(params);
    }
    const auto step = ++next_state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    for (std::size_t t = 0; t < next.size(); ++t) {
      Tensor& m = next_state.m[t];
      Tensor& v = next_state.v[t];
      for (std::size_t i = 0; i < next[t].size(); ++i) {
        const double g = grads[t][i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        next[t][i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
      }
    }
  }
  for (const Tensor& t : next) {
    if (!all_finite(t.values())) throw NumericsError("optimizer produced a non-finite parameter");
  }
  params = std::move(next);
  state = std::move(next_state);
}

OptimizerStep optimizer_step(std::vector<Tensor> params, const GradientSet& grads, OptimizerState state,
                             const OptimizerConfig& config) {
  apply_update(params, grads, state, config);
  return {std::move(params), std::move(state)};
}

}  // namespace lasium::numkit

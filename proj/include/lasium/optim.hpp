#pragma once

#include <cstdint>
#include <vector>

#include "lasium/network.hpp"

namespace lasium::numkit {

enum class OptimizerKind : std::uint8_t { sgd = 0, adam = 1 };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments are allocated lazily on the first step.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct OptimizerStep {
  std::vector<Tensor> params;
  OptimizerState state;
};

/// sgd: p - lr*g. adam: bias-corrected moments. Throws NumericsError and
/// leaves `params`/`state` untouched if any updated value is non-finite.
void apply_update(std::vector<Tensor>& params, const GradientSet& grads, OptimizerState& state,
                  const OptimizerConfig& config);

OptimizerStep optimizer_step(std::vector<Tensor> params, const GradientSet& grads, OptimizerState state,
                             const OptimizerConfig& config);

}  // namespace lasium::numkit

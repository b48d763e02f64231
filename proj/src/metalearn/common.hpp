#pragma once

#include <cmath>
#include <string>

#include "lasium/metalearn.hpp"
#include "lasium/parallel.hpp"

namespace lasium::metalearn::detail {

inline void check_finite(const std::vector<Tensor>& ts, const char* what) {
  for (const Tensor& t : ts) {
    if (!numkit::all_finite(t.values())) throw NumericsError(std::string(what) + " became non-finite");
  }
}

/// Per-task gradients computed in parallel, averaged in task order so the
/// result does not depend on the thread count.
template <class PerTask>
MetaGradient mean_gradient(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                           std::size_t threads, PerTask per_task) {
  if (batch.empty()) throw ConfigError("meta-batch is empty");
  std::vector<MetaGradient> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) { parts[i] = per_task(batch[i]); });

  MetaGradient out{0.0, numkit::zeros_like(params.tensors)};
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const MetaGradient& p : parts) {
    out.loss += w * p.loss;
    numkit::axpy(w, p.grads, out.grads);
  }
  if (!std::isfinite(out.loss)) throw NumericsError("meta-loss is non-finite");
  check_finite(out.grads, "meta-gradient");
  return out;
}

inline MetaStepResult adam_step(const NetworkParams& params, const MetaGradient& g, numkit::OptimizerState state,
                                double lr) {
  numkit::OptimizerConfig opt;
  opt.kind = numkit::OptimizerKind::adam;
  opt.lr = lr;
  numkit::OptimizerStep step = numkit::optimizer_step(params.tensors, g.grads, std::move(state), opt);
  return {NetworkParams{params.arch, std::move(step.params)}, std::move(step.state), g.loss};
}

inline void check_batch_size(const std::vector<data::MetaTask>& batch, std::size_t expected) {
  if (batch.size() != expected) {
    throw ConfigError("meta-batch holds " + std::to_string(batch.size()) + " tasks, expected " +
                      std::to_string(expected));
  }
}

}  // namespace lasium::metalearn::detail

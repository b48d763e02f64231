#include <cmath>
#include <string>

#include "common.hpp"

namespace lasium::metalearn {

using numkit::LossKind;
using numkit::Targets;

void MamlConfig::validate() const {
  // inner_lr = 0 and adaptation_steps = 0 are allowed: both reduce MAML to
  // plain training on the validation loss, which is a useful reference point.
  if (!(inner_lr >= 0.0) || !std::isfinite(inner_lr)) throw ConfigError("inner_lr must be finite and >= 0");
  if (!(meta_lr > 0.0) || !std::isfinite(meta_lr)) throw ConfigError("meta_lr must be finite and > 0");
  if (eval_adaptation_steps < 1) throw ConfigError("eval_adaptation_steps must be >= 1");
  if (meta_batch_size < 1) throw ConfigError("meta_batch_size must be >= 1");
}

std::vector<Tensor> gradient_descent(std::vector<Tensor> params,
                                     const std::function<GradientSet(const std::vector<Tensor>&)>& grad, double lr,
                                     std::size_t steps) {
  for (std::size_t k = 0; k < steps; ++k) numkit::axpy(-lr, grad(params), params);
  return params;
}

using detail::check_finite;

AdaptedParams maml_adapt(const NetworkParams& params, const Tensor& x, const std::vector<std::uint32_t>& y,
                         double inner_lr, std::size_t steps, std::uint64_t task_id) {
  const Targets targets = Targets::classes(y);
  NetworkParams net = params;
  net.tensors = gradient_descent(
      params.tensors,
      [&](const std::vector<Tensor>& p) {
        net.tensors = p;
        return numkit::grad(net, LossKind::softmax_cross_entropy, x, targets).grads;
      },
      inner_lr, steps);
  check_finite(net.tensors, "adapted parameters");
  return {std::move(net), numkit::params_hash(params), task_id, steps};
}

MetaGradient maml_task_gradient(const NetworkParams& params, const data::MetaTask& task, const MamlConfig& config) {
  if (task.k_val == 0) throw ConfigError("meta-training tasks need K_val >= 1");
  const Targets train = Targets::classes(task.train_y);
  const Targets val = Targets::classes(task.val_y);

  // Keep every inner iterate; the second-order pass revisits them in reverse.
  std::vector<NetworkParams> path{params};
  for (std::size_t k = 0; k < config.adaptation_steps; ++k) {
    NetworkParams next = path.back();
    numkit::axpy(-config.inner_lr,
                 numkit::grad(path.back(), LossKind::softmax_cross_entropy, task.train_x, train).grads,
                 next.tensors);
    path.push_back(std::move(next));
  }
  check_finite(path.back().tensors, "adapted parameters");

  numkit::LossAndGrad outer = numkit::grad(path.back(), LossKind::softmax_cross_entropy, task.val_x, val);
  GradientSet lambda = std::move(outer.grads);
  if (config.order == MamlOrder::second) {
    // d theta_{k+1} / d theta_k = I - a H_k, so lambda <- lambda - a H_k lambda.
    for (std::size_t k = config.adaptation_steps; k-- > 0;) {
      const auto hvp =
          numkit::hessian_vector_product(path[k], LossKind::softmax_cross_entropy, task.train_x, train, lambda);
      numkit::axpy(-config.inner_lr, hvp.hv, lambda);
    }
  }
  return {outer.loss, std::move(lambda)};
}

MetaGradient maml_meta_gradient(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                                const MamlConfig& config, std::size_t threads) {
  config.validate();
  return detail::mean_gradient(params, batch, threads,
                               [&](const data::MetaTask& t) { return maml_task_gradient(params, t, config); });
}

MetaStepResult maml_meta_step(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                              const MamlConfig& config, numkit::OptimizerState state, std::size_t threads) {
  config.validate();
  detail::check_batch_size(batch, config.meta_batch_size);
  return detail::adam_step(params, maml_meta_gradient(params, batch, config, threads), std::move(state),
                           config.meta_lr);
}

}  // namespace lasium::metalearn

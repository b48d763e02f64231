#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lasium/container.hpp"
#include "lasium/data.hpp"
#include "lasium/network.hpp"
#include "lasium/optim.hpp"

namespace lasium::metalearn {

using numkit::GradientSet;
using numkit::NetworkParams;
using numkit::Tensor;

enum class MamlOrder { first, second };

struct MamlConfig {
  double inner_lr = 0.4;
  double meta_lr = 0.001;
  std::size_t adaptation_steps = 5;
  std::size_t eval_adaptation_steps = 50;
  std::size_t meta_batch_size = 4;
  MamlOrder order = MamlOrder::second;

  void validate() const;
};

struct ProtoConfig {
  double meta_lr = 0.001;
  std::size_t meta_batch_size = 4;

  void validate() const;
};

/// θ' after inner-loop adaptation, with where it came from.
struct AdaptedParams {
  NetworkParams params;
  std::uint64_t source_hash = 0;
  std::uint64_t task_id = 0;
  std::size_t steps = 0;
};

/// Plain gradient descent: p <- p - lr * grad(p), `steps` times.
std::vector<Tensor> gradient_descent(std::vector<Tensor> params,
                                     const std::function<GradientSet(const std::vector<Tensor>&)>& grad, double lr,
                                     std::size_t steps);

/// Full-batch cross-entropy steps on (x, y).
AdaptedParams maml_adapt(const NetworkParams& params, const Tensor& x, const std::vector<std::uint32_t>& y,
                         double inner_lr, std::size_t steps, std::uint64_t task_id = 0);

struct MetaGradient {
  double loss = 0.0;
  GradientSet grads;
};

/// Gradient of the post-adaptation validation loss for one task. Second
/// order differentiates through every inner step; first order stops at θ'.
MetaGradient maml_task_gradient(const NetworkParams& params, const data::MetaTask& task, const MamlConfig& config);

/// Mean over tasks, reduced in task order.
MetaGradient maml_meta_gradient(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                                const MamlConfig& config, std::size_t threads = 1);

struct MetaStepResult {
  NetworkParams params;
  numkit::OptimizerState state;
  double meta_loss = 0.0;
};

/// One Adam step at meta_lr on the meta-gradient. The batch must hold
/// exactly meta_batch_size tasks.
MetaStepResult maml_meta_step(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                              const MamlConfig& config, numkit::OptimizerState state, std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Prototypical networks (squared Euclidean distance)

/// Row i is the mean of the embeddings labelled i.
Tensor proto_prototypes(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, std::size_t n_way);

/// Softmax over negative squared distances, [queries, n_way].
Tensor proto_classify(const Tensor& queries, const Tensor& prototypes);

/// Episode cross-entropy on task.val with prototypes from task.train, and
/// its gradient. Support and query rows share one forward pass.
MetaGradient proto_task_gradient(const NetworkParams& params, const data::MetaTask& task);

MetaGradient proto_meta_gradient(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                                 std::size_t threads = 1);

MetaStepResult proto_meta_step(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                               const ProtoConfig& config, numkit::OptimizerState state, std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Evaluation

enum class LearnerKind { maml, proto };

std::string to_string(LearnerKind kind);
LearnerKind parse_learner_kind(const std::string& text);

struct Learner {
  LearnerKind kind = LearnerKind::maml;
  NetworkParams params;
  MamlConfig maml;
  ProtoConfig proto;
};

/// Fraction of task.val classified correctly. MAML adapts a private copy for
/// eval_adaptation_steps first; ProtoNets uses prototypes from task.train.
double evaluate_episode(const Learner& learner, const data::MetaTask& task);

/// Argmax with ties to the lowest index, per row.
std::vector<std::uint32_t> argmax_rows(const Tensor& scores);

// ---------------------------------------------------------------------------
// Checkpoints: an LGEN container (kind classifier) plus an optimizer sidecar.
//
// Sidecar "LOPT": magic | u16 version | u8 optimizer kind | u64 step
//                 | u64 value count P | P f64 first moments | P f64 second moments

io::Container to_container(const Learner& learner);
Learner learner_from_container(const io::Container& c);
void save_learner(const std::filesystem::path& path, const Learner& learner);
Learner load_learner(const std::filesystem::path& path);

void save_optimizer_state(const std::filesystem::path& path, const numkit::OptimizerState& state,
                          numkit::OptimizerKind kind);
/// Moments are reshaped to match `params`.
numkit::OptimizerState load_optimizer_state(const std::filesystem::path& path, const NetworkParams& params);

}  // namespace lasium::metalearn

#include "lasium/metalearn.hpp"

namespace lasium::metalearn {

std::string to_string(LearnerKind kind) { return kind == LearnerKind::maml ? "maml" : "protonets"; }

LearnerKind parse_learner_kind(const std::string& text) {
  if (text == "maml") return LearnerKind::maml;
  if (text == "protonets" || text == "proto") return LearnerKind::proto;
  throw ConfigError("unknown learner '" + text + "' (expected maml or protonets)");
}

std::vector<std::uint32_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows needs a rank-2 tensor");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<std::uint32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (scores[r * cols + c] > scores[r * cols + best]) best = c;
    }
    out[r] = static_cast<std::uint32_t>(best);
  }
  return out;
}

double evaluate_episode(const Learner& learner, const data::MetaTask& task) {
  if (task.k_val == 0) throw ConfigError("evaluation tasks need K_val >= 1");
  std::vector<std::uint32_t> predicted;
  if (learner.kind == LearnerKind::maml) {
    const AdaptedParams adapted = maml_adapt(learner.params, task.train_x, task.train_y, learner.maml.inner_lr,
                                             learner.maml.eval_adaptation_steps, task.seed);
    // Batch norm uses the statistics of the query batch itself.
    predicted = argmax_rows(numkit::forward(adapted.params, task.val_x));
  } else {
    const std::size_t ns = task.train_y.size(), nq = task.val_y.size();
    const Tensor emb = numkit::forward(learner.params, numkit::concat_rows(task.train_x, task.val_x));
    const std::size_t dim = emb.dim(1);
    const Tensor support({ns, dim}, std::vector<double>(emb.data(), emb.data() + ns * dim));
    const Tensor query({nq, dim}, std::vector<double>(emb.data() + ns * dim, emb.data() + (ns + nq) * dim));
    predicted = argmax_rows(proto_classify(query, proto_prototypes(support, task.train_y, task.n_way)));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == task.val_y[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

}  // namespace lasium::metalearn

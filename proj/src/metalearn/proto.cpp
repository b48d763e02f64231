#include <algorithm>
#include <cmath>
#include <limits>

#include "common.hpp"

namespace lasium::metalearn {

void ProtoConfig::validate() const {
  if (!(meta_lr > 0.0) || !std::isfinite(meta_lr)) throw ConfigError("meta_lr must be finite and > 0");
  if (meta_batch_size < 1) throw ConfigError("meta_batch_size must be >= 1");
}

Tensor proto_prototypes(const Tensor& embeddings, const std::vector<std::uint32_t>& labels, std::size_t n_way) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw DimensionError("prototypes need [rows, dim] embeddings with one label per row");
  }
  const std::size_t dim = embeddings.dim(1);
  Tensor protos({n_way, dim});
  std::vector<std::size_t> counts(n_way, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_way) throw ConfigError("label out of range for prototypes");
    ++counts[labels[i]];
    for (std::size_t j = 0; j < dim; ++j) protos[labels[i] * dim + j] += embeddings[i * dim + j];
  }
  for (std::size_t c = 0; c < n_way; ++c) {
    if (counts[c] == 0) throw ConfigError("class " + std::to_string(c) + " has no support rows");
    for (std::size_t j = 0; j < dim; ++j) protos[c * dim + j] /= static_cast<double>(counts[c]);
  }
  return protos;
}

namespace {

/// logits[q][c] = -|query_q - proto_c|^2
Tensor neg_sq_distances(const Tensor& queries, const Tensor& protos) {
  if (queries.rank() != 2 || protos.rank() != 2 || queries.dim(1) != protos.dim(1)) {
    throw DimensionError("queries and prototypes must share the embedding dimension");
  }
  const std::size_t nq = queries.dim(0), nc = protos.dim(0), dim = queries.dim(1);
  Tensor out({nq, nc});
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t c = 0; c < nc; ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = queries[q * dim + j] - protos[c * dim + j];
        d2 += d * d;
      }
      out[q * nc + c] = -d2;
    }
  }
  return out;
}

void softmax_rows(Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = logits.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
}

}  // namespace

Tensor proto_classify(const Tensor& queries, const Tensor& prototypes) {
  Tensor p = neg_sq_distances(queries, prototypes);
  softmax_rows(p);
  return p;
}

MetaGradient proto_task_gradient(const NetworkParams& params, const data::MetaTask& task) {
  if (task.k_val == 0) throw ConfigError("meta-training tasks need K_val >= 1");
  const std::size_t ns = task.train_y.size(), nq = task.val_y.size(), n = task.n_way;
  const numkit::ForwardTrace trace = numkit::forward_trace(params, numkit::concat_rows(task.train_x, task.val_x));
  const std::size_t dim = trace.output.dim(1);
  const double* emb = trace.output.data();
  const Tensor support({ns, dim}, std::vector<double>(emb, emb + ns * dim));
  const Tensor query({nq, dim}, std::vector<double>(emb + ns * dim, emb + (ns + nq) * dim));

  const Tensor protos = proto_prototypes(support, task.train_y, n);
  Tensor probs = neg_sq_distances(query, protos);
  softmax_rows(probs);

  double loss = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    loss -= std::log(std::max(probs[q * n + task.val_y[q]], std::numeric_limits<double>::min()));
  }
  loss /= static_cast<double>(nq);

  // dL/dlogit = (p - onehot) / Q; logit = -|q - c|^2.
  Tensor d_emb({ns + nq, dim});
  Tensor d_protos({n, dim});
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t c = 0; c < n; ++c) {
      const double g = (probs[q * n + c] - (task.val_y[q] == c ? 1.0 : 0.0)) / static_cast<double>(nq);
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = query[q * dim + j] - protos[c * dim + j];
        d_emb[(ns + q) * dim + j] -= 2.0 * g * diff;
        d_protos[c * dim + j] += 2.0 * g * diff;
      }
    }
  }
  std::vector<std::size_t> counts(n, 0);
  for (std::uint32_t l : task.train_y) ++counts[l];
  for (std::size_t s = 0; s < ns; ++s) {
    const std::uint32_t c = task.train_y[s];
    for (std::size_t j = 0; j < dim; ++j) {
      d_emb[s * dim + j] = d_protos[c * dim + j] / static_cast<double>(counts[c]);
    }
  }
  return {loss, numkit::backward(params, trace, d_emb).grads};
}

MetaGradient proto_meta_gradient(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                                 std::size_t threads) {
  return detail::mean_gradient(params, batch, threads,
                               [&](const data::MetaTask& t) { return proto_task_gradient(params, t); });
}

MetaStepResult proto_meta_step(const NetworkParams& params, const std::vector<data::MetaTask>& batch,
                               const ProtoConfig& config, numkit::OptimizerState state, std::size_t threads) {
  config.validate();
  detail::check_batch_size(batch, config.meta_batch_size);
  return detail::adam_step(params, proto_meta_gradient(params, batch, threads), std::move(state), config.meta_lr);
}

}  // namespace lasium::metalearn

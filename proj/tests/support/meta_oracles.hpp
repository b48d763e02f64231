#pragma once

// Toy tasks and forward-only meta-objectives shared by the metalearn unit
// tests and the acceptance checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "lasium/metalearn.hpp"

namespace lasium::testing {

using metalearn::AdaptedParams;
using metalearn::MamlConfig;
using numkit::LossKind;
using numkit::NetworkParams;
using numkit::Targets;
using numkit::Tensor;

inline Tensor gaussian(const numkit::Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

/// Task whose rows are drawn around per-class means; `spread` = 0 gives
/// exact copies of the means, a large spread makes labels uninformative.
inline data::MetaTask toy_task(const numkit::Shape& sample_shape, std::size_t n, std::size_t k_tr, std::size_t k_val,
                        double spread, Rng& rng, double separation = 1.0) {
  numkit::Shape means_shape{n};
  means_shape.insert(means_shape.end(), sample_shape.begin(), sample_shape.end());
  const Tensor means = gaussian(means_shape, rng, separation);
  const std::size_t stride = numkit::shape_size(sample_shape);
  auto rows = [&](std::size_t k) {
    numkit::Shape s{n * k};
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    Tensor x(s);
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t f = 0; f < stride; ++f) {
          x[(c * k + j) * stride + f] = means[c * stride + f] + spread * rng.normal();
        }
      }
    }
    return x;
  };
  data::MetaTask t;
  t.n_way = n;
  t.k_tr = k_tr;
  t.k_val = k_val;
  t.train_x = rows(k_tr);
  t.train_y = data::grouped_labels(n, k_tr);
  t.val_x = rows(k_val);
  t.val_y = data::grouped_labels(n, k_val);
  return t;
}

/// The full MAML objective evaluated with forward passes only.
inline double maml_objective(const NetworkParams& p, const data::MetaTask& t, const MamlConfig& cfg) {
  const AdaptedParams a = metalearn::maml_adapt(p, t.train_x, t.train_y, cfg.inner_lr, cfg.adaptation_steps);
  return numkit::loss_value(a.params, LossKind::softmax_cross_entropy, t.val_x, Targets::classes(t.val_y));
}

/// ProtoNets episode loss from forward embeddings and plain loops.
inline double proto_objective(const NetworkParams& p, const data::MetaTask& t) {
  const Tensor s = numkit::forward(p, numkit::concat_rows(t.train_x, t.val_x));
  const std::size_t dim = s.dim(1), ns = t.train_y.size(), nq = t.val_y.size();
  std::vector<std::vector<double>> protos(t.n_way, std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < dim; ++j) protos[t.train_y[i]][j] += s[i * dim + j] / static_cast<double>(t.k_tr);
  }
  double loss = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    std::vector<double> logits(t.n_way);
    for (std::size_t c = 0; c < t.n_way; ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = s[(ns + q) * dim + j] - protos[c][j];
        d2 += d * d;
      }
      logits[c] = -d2;
    }
    double lse = 0.0;
    const double mx = *std::max_element(logits.begin(), logits.end());
    for (double l : logits) lse += std::exp(l - mx);
    loss += mx + std::log(lse) - logits[t.val_y[q]];
  }
  return loss / static_cast<double>(nq);
}

}  // namespace lasium::testing

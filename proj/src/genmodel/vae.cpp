#include <algorithm>
#include <cmath>
#include <numeric>

#include "lasium/genmodel.hpp"
#include "lasium/optim.hpp"

namespace lasium::genmodel {

using numkit::shape_size;

namespace {

struct ElboPass {
  double loss = 0.0;  // summed over the batch
  numkit::GradientSet enc_grads;
  numkit::GradientSet dec_grads;
};

// One reparametrized ELBO evaluation on a flat [B, D] batch. `eps` is [B, L].
// Per-sample loss is sum of squared reconstruction error plus
// kl_weight * KL(q(z|x) || N(0, I)); gradients are of the batch mean.
ElboPass elbo(const VaeModel& m, const Tensor& x, const Tensor& eps, double kl_weight, bool want_grads) {
  const std::size_t b = x.dim(0);
  const std::size_t d = x.dim(1);
  const std::size_t l = eps.dim(1);

  const numkit::ForwardTrace enc = numkit::forward_trace(m.encoder, x);
  Tensor z({b, l});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < l; ++j) {
      const double mu = enc.output[r * 2 * l + j];
      const double lv = enc.output[r * 2 * l + l + j];
      z[r * l + j] = mu + std::exp(0.5 * lv) * eps[r * l + j];
    }
  }
  const numkit::ForwardTrace dec = numkit::forward_trace(m.decoder, z);

  ElboPass out;
  const double inv_b = 1.0 / static_cast<double>(b);
  Tensor d_out({b, d});
  for (std::size_t i = 0; i < b * d; ++i) {
    const double diff = dec.output[i] - x[i];
    out.loss += diff * diff;
    d_out[i] = 2.0 * diff * inv_b;
  }
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < l; ++j) {
      const double mu = enc.output[r * 2 * l + j];
      const double lv = enc.output[r * 2 * l + l + j];
      out.loss += kl_weight * -0.5 * (1.0 + lv - mu * mu - std::exp(lv));
    }
  }
  if (!std::isfinite(out.loss)) throw NumericsError("non-finite ELBO");
  if (!want_grads) return out;

  numkit::BackwardResult dec_back = numkit::backward(m.decoder, dec, d_out);
  Tensor d_enc({b, 2 * l});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < l; ++j) {
      const double mu = enc.output[r * 2 * l + j];
      const double lv = enc.output[r * 2 * l + l + j];
      const double dz = dec_back.input_grad[r * l + j];
      const double sd = std::exp(0.5 * lv);
      d_enc[r * 2 * l + j] = dz + kl_weight * mu * inv_b;
      d_enc[r * 2 * l + l + j] = dz * eps[r * l + j] * 0.5 * sd + kl_weight * 0.5 * (std::exp(lv) - 1.0) * inv_b;
    }
  }
  out.enc_grads = numkit::backward(m.encoder, enc, d_enc).grads;
  out.dec_grads = std::move(dec_back.grads);
  return out;
}

Tensor gather_rows(const Tensor& flat, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  const std::size_t d = flat.dim(1);
  std::vector<double> rows;
  rows.reserve((end - begin) * d);
  for (std::size_t i = begin; i < end; ++i) {
    const double* r = flat.data() + idx[i] * d;
    rows.insert(rows.end(), r, r + d);
  }
  return Tensor({end - begin, d}, std::move(rows));
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

double mean_elbo(const VaeModel& m, const Tensor& flat, double kl_weight, std::uint64_t noise_seed,
                 std::size_t latent) {
  Rng noise(noise_seed);
  const std::size_t n = flat.dim(0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  double total = 0.0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < n; s += kChunk) {
    const std::size_t e = std::min(n, s + kChunk);
    total += elbo(m, gather_rows(flat, idx, s, e), normal_tensor(e - s, latent, noise), kl_weight, false).loss;
  }
  return total / static_cast<double>(n);
}

Tensor flatten_samples(const Tensor& samples) {
  if (samples.rank() < 2) throw DimensionError("samples must be [count, ...sample_shape]");
  const std::size_t n = samples.dim(0);
  return samples.reshaped({n, samples.size() / n});
}

}  // namespace

double vae_loss(const Generator& gen, const Tensor& samples, double kl_weight, std::uint64_t noise_seed) {
  const auto* m = std::get_if<VaeModel>(&gen.model());
  if (m == nullptr) throw UnsupportedOperation("vae_loss requires a VAE generator");
  return mean_elbo(*m, flatten_samples(samples), kl_weight, noise_seed, gen.latent_dim());
}

Generator train_vae(const Tensor& samples, const VaeConfig& config, Rng& rng, TrainingLog* log) {
  if (config.epochs == 0) throw ConfigError("VAE training needs epochs >= 1");
  if (config.latent_dim == 0) throw ConfigError("VAE latent_dim must be >= 1");
  if (config.batch_size == 0) throw ConfigError("VAE batch_size must be >= 1");
  if (!(config.lr > 0.0)) throw ConfigError("VAE learning rate must be positive");
  if (config.kl_weight < 0.0) throw ConfigError("VAE KL weight must be non-negative");

  const Tensor flat = flatten_samples(samples);
  const std::size_t n = flat.dim(0);
  const std::size_t d = flat.dim(1);
  const Shape sample_shape(samples.shape().begin() + 1, samples.shape().end());
  const std::size_t l = config.latent_dim;

  std::vector<std::size_t> dec_hidden(config.hidden.rbegin(), config.hidden.rend());
  VaeModel m;
  m.encoder = numkit::init_network(numkit::Architecture::mlp(d, config.hidden, 2 * l), rng);
  m.decoder = numkit::init_network(numkit::Architecture::mlp(l, dec_hidden, d), rng);

  const std::uint64_t eval_seed = rng.next_u64();
  numkit::OptimizerConfig opt{numkit::OptimizerKind::adam, config.lr};
  numkit::OptimizerState enc_state, dec_state;
  TrainingLog local;

  try {
    local.initial_loss = mean_elbo(m, flat, config.kl_weight, eval_seed, l);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng.engine());
      double epoch_total = 0.0;
      for (std::size_t s = 0; s < n; s += config.batch_size) {
        const std::size_t e = std::min(n, s + config.batch_size);
        const Tensor x = gather_rows(flat, order, s, e);
        const ElboPass pass = elbo(m, x, normal_tensor(e - s, l, rng), config.kl_weight, true);
        epoch_total += pass.loss;
        numkit::apply_update(m.encoder.tensors, pass.enc_grads, enc_state, opt);
        numkit::apply_update(m.decoder.tensors, pass.dec_grads, dec_state, opt);
      }
      local.epoch_loss.push_back(epoch_total / static_cast<double>(n));
    }
    local.final_loss = mean_elbo(m, flat, config.kl_weight, eval_seed, l);
  } catch (const NumericsError& e) {
    throw TrainingDiverged(std::string("VAE training diverged: ") + e.what());
  }

  if (log != nullptr) *log = std::move(local);
  return Generator(std::move(m), sample_shape, config.clamp_unit);
}

}  // namespace lasium::genmodel

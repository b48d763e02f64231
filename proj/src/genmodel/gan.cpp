#include "lasium/genmodel.hpp"

#ifdef LASIUM_WITH_GAN

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lasium/optim.hpp"

namespace lasium::genmodel {

namespace {

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Tensor latent_noise(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

}  // namespace

bool gan_enabled() noexcept { return true; }

Generator train_gan(const Tensor& samples, const GanConfig& config, Rng& rng, GanTrainingLog* log) {
  if (config.epochs == 0) throw ConfigError("GAN training needs epochs >= 1");
  if (config.latent_dim == 0) throw ConfigError("GAN latent_dim must be >= 1");
  if (config.batch_size == 0) throw ConfigError("GAN batch_size must be >= 1");
  if (samples.rank() < 2) throw DimensionError("samples must be [count, ...sample_shape]");

  const std::size_t n = samples.dim(0);
  const std::size_t d = samples.size() / n;
  const Shape sample_shape(samples.shape().begin() + 1, samples.shape().end());
  const Tensor flat = samples.reshaped({n, d});
  const std::size_t l = config.latent_dim;

  GanModel g;
  g.generator = numkit::init_network(numkit::Architecture::mlp(l, config.hidden, d), rng);
  numkit::NetworkParams disc = numkit::init_network(numkit::Architecture::mlp(d, config.hidden, 1), rng);

  numkit::OptimizerConfig opt{numkit::OptimizerKind::adam, config.lr, 0.5, 0.999};
  numkit::OptimizerState g_state, d_state;
  GanTrainingLog local;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  try {
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng.engine());
      for (std::size_t s = 0; s < n; s += config.batch_size) {
        const std::size_t b = std::min(n, s + config.batch_size) - s;
        const double inv_b = 1.0 / static_cast<double>(b);

        // Discriminator: real rows first, then fakes; label 1 for real.
        std::vector<double> rows;
        rows.reserve(2 * b * d);
        for (std::size_t i = s; i < s + b; ++i) {
          const double* r = flat.data() + order[i] * d;
          rows.insert(rows.end(), r, r + d);
        }
        const Tensor fake = numkit::forward(g.generator, latent_noise(b, l, rng));
        rows.insert(rows.end(), fake.storage().begin(), fake.storage().end());
        const Tensor both({2 * b, d}, std::move(rows));
        const numkit::ForwardTrace dt = numkit::forward_trace(disc, both);
        Tensor d_logit({2 * b, 1});
        for (std::size_t i = 0; i < 2 * b; ++i) {
          const double y = i < b ? 1.0 : 0.0;
          d_logit[i] = (sigmoid(dt.output[i]) - y) * inv_b;
        }
        numkit::apply_update(disc.tensors, numkit::backward(disc, dt, d_logit).grads, d_state, opt);

        // Generator: non-saturating loss -log D(G(z)).
        const numkit::ForwardTrace gt = numkit::forward_trace(g.generator, latent_noise(b, l, rng));
        const numkit::ForwardTrace ft = numkit::forward_trace(disc, gt.output);
        Tensor g_logit({b, 1});
        for (std::size_t i = 0; i < b; ++i) g_logit[i] = (sigmoid(ft.output[i]) - 1.0) * inv_b;
        const Tensor d_fake = numkit::backward(disc, ft, g_logit).input_grad;
        numkit::apply_update(g.generator.tensors, numkit::backward(g.generator, gt, d_fake).grads, g_state, opt);
      }

      // Real-vs-fake accuracy on the full set and an equal number of fakes.
      const Tensor real_logits = numkit::forward(disc, flat);
      const Tensor fake_logits = numkit::forward(disc, numkit::forward(g.generator, latent_noise(n, l, rng)));
      std::size_t correct = 0;
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        correct += real_logits[i] > 0.0;
        correct += fake_logits[i] <= 0.0;
        loss += softplus(-real_logits[i]) + softplus(fake_logits[i]);
      }
      if (!std::isfinite(loss)) throw NumericsError("non-finite discriminator loss");
      local.discriminator_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(2 * n));
    }
  } catch (const NumericsError& e) {
    throw TrainingDiverged(std::string("GAN training diverged: ") + e.what());
  }

  if (log != nullptr) *log = std::move(local);
  return Generator(std::move(g), sample_shape, config.clamp_unit);
}

}  // namespace lasium::genmodel

#else

namespace lasium::genmodel {

bool gan_enabled() noexcept { return false; }

Generator train_gan(const Tensor&, const GanConfig&, Rng&, GanTrainingLog*) {
  throw UnsupportedOperation("GAN support was not built (configure with -DLASIUM_WITH_GAN=ON)");
}

}  // namespace lasium::genmodel

#endif

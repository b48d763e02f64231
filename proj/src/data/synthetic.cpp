#include <cmath>

#include "lasium/data.hpp"

namespace lasium::data {

SyntheticData make_synthetic(std::size_t n_classes, std::size_t per_class, std::size_t latent_dim,
                             std::uint64_t seed, const SyntheticOptions& options) {
  if (n_classes < 5) throw ConfigError("synthetic data needs at least 5 classes");
  if (per_class < 20) throw ConfigError("synthetic data needs at least 20 samples per class");
  if (latent_dim == 0) throw ConfigError("synthetic latent_dim must be >= 1");

  const Rng master(seed);
  Rng center_rng = master.split(0);
  Rng map_rng = master.split(1);
  Rng sample_rng = master.split(2);

  genmodel::AnalyticGenConfig cfg;
  cfg.latent_dim = latent_dim;
  cfg.r_class = options.r_class;
  cfg.centers = genmodel::sphere_centers(n_classes, latent_dim, options.center_radius, center_rng);
  if (options.sample_dim > 0) {
    const double sd = options.output_scale / std::sqrt(static_cast<double>(latent_dim));
    cfg.output_weight = Tensor({options.sample_dim, latent_dim});
    for (double& w : cfg.output_weight.storage()) w = sd * map_rng.normal();
  }
  genmodel::Generator gen = genmodel::make_analytic_generator(std::move(cfg), center_rng);

  std::vector<genmodel::LatentVector> latents;
  std::vector<std::uint32_t> labels;
  latents.reserve(n_classes * per_class);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      latents.push_back(genmodel::sample_class_latent(gen, c, sample_rng));
      labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  Tensor samples = genmodel::generate_batch(gen, latents);
  LabeledDataset ds(std::move(samples), std::move(labels), SampleKind::vector_f64);
  return SyntheticData{std::move(ds), std::move(gen), std::move(latents)};
}

}  // namespace lasium::data

#include <cmath>
#include <string>

#include "lasium/genmodel.hpp"

namespace lasium::genmodel {

std::vector<std::vector<double>> sphere_centers(std::size_t n, std::size_t dim, double radius, Rng& rng) {
  if (dim == 0) throw ConfigError("sphere dimension must be positive");
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& c : out) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : c) {
        x = rng.normal();
        norm += x * x;
      }
    } while (norm == 0.0);
    const double s = radius / std::sqrt(norm);
    for (double& x : c) x *= s;
  }
  return out;
}

Generator make_analytic_generator(AnalyticGenConfig config, Rng& rng) {
  if (config.latent_dim == 0) throw ConfigError("analytic generator needs latent_dim >= 1");
  if (!(config.r_class > 0.0) || !std::isfinite(config.r_class)) throw ConfigError("r_class must be positive");
  if (config.latent_spread < 0.0) throw ConfigError("latent_spread must be non-negative");
  if (config.centers.empty()) {
    if (config.n_classes == 0) throw ConfigError("analytic generator needs at least one class");
    config.centers = sphere_centers(config.n_classes, config.latent_dim, config.center_radius, rng);
  }
  config.n_classes = config.centers.size();

  for (const auto& c : config.centers) {
    if (c.size() != config.latent_dim) throw DimensionError("class center has wrong dimension");
    if (!numkit::all_finite(c)) throw ConfigError("class center has non-finite entries");
  }
  const double min_sep = 4.0 * config.r_class;
  for (std::size_t a = 0; a < config.centers.size(); ++a) {
    for (std::size_t b = a + 1; b < config.centers.size(); ++b) {
      const double d = distance(LatentVector(config.centers[a]), LatentVector(config.centers[b]));
      if (!(d > min_sep)) {
        throw ConfigError("centers " + std::to_string(a) + " and " + std::to_string(b) + " are " +
                          std::to_string(d) + " apart; need more than 4 * r_class = " + std::to_string(min_sep));
      }
    }
  }

  std::size_t out_dim = config.latent_dim;
  if (!config.output_weight.empty()) {
    if (config.output_weight.rank() != 2 || config.output_weight.dim(1) != config.latent_dim) {
      throw DimensionError("output map must be [sample_dim, latent_dim]");
    }
    out_dim = config.output_weight.dim(0);
  }
  if (!config.output_bias.empty() && config.output_bias.size() != out_dim) {
    throw DimensionError("output bias length does not match sample dim");
  }
  return Generator(AnalyticModel{std::move(config)}, Shape{out_dim}, false);
}

}  // namespace lasium::genmodel

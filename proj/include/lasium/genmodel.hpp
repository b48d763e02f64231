#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

#include "lasium/container.hpp"
#include "lasium/network.hpp"
#include "lasium/rng.hpp"

namespace lasium::genmodel {

using numkit::Shape;
using numkit::Tensor;

/// A point in a generator's latent space. Always finite.
class LatentVector {
 public:
  LatentVector() = default;
  explicit LatentVector(std::vector<double> values);

  std::size_t dim() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const LatentVector&, const LatentVector&) = default;

 private:
  std::vector<double> values_;
};

/// Euclidean distance; the only latent metric used anywhere.
double distance(const LatentVector& a, const LatentVector& b);

enum class GeneratorKind : std::uint8_t { vae = 0, gan = 1, analytic = 2 };

inline constexpr double kOracleSlack = 3.0;

/// Generator with known class structure. Class c occupies the ball around
/// centers[c]; the output map is affine so latent geometry has an exact image
/// in sample space.
struct AnalyticGenConfig {
  std::size_t latent_dim = 0;
  /// When empty, `n_classes` centers are drawn on the sphere of radius
  /// `center_radius`.
  std::vector<std::vector<double>> centers;
  std::size_t n_classes = 0;
  double center_radius = 10.0;
  double r_class = 1.0;
  /// Per-coordinate std of class-conditional latents. 0 means
  /// r_class / sqrt(latent_dim), i.e. E|z - center|^2 = r_class^2.
  double latent_spread = 0.0;
  Tensor output_weight;  // [sample_dim, latent_dim]; empty means identity
  std::vector<double> output_bias;

  std::size_t n_true_classes() const noexcept { return centers.size(); }
};

struct VaeModel {
  numkit::NetworkParams encoder;  // sample -> [mean | log-variance]
  numkit::NetworkParams decoder;  // latent -> sample
};

struct GanModel {
  numkit::NetworkParams generator;
};

struct AnalyticModel {
  AnalyticGenConfig config;
};

class Generator {
 public:
  using Model = std::variant<VaeModel, GanModel, AnalyticModel>;

  Generator(Model model, Shape sample_shape, bool clamp_unit);

  GeneratorKind kind() const noexcept { return static_cast<GeneratorKind>(model_.index()); }
  std::size_t latent_dim() const noexcept { return latent_dim_; }
  const Shape& sample_shape() const noexcept { return sample_shape_; }
  /// Image generators clamp decoded pixels to [0, 1].
  bool clamps_to_unit() const noexcept { return clamp_unit_; }
  bool has_encoder() const noexcept { return kind() == GeneratorKind::vae; }

  /// Calibrated anchor-distance threshold stored with the checkpoint.
  std::optional<double> eps_dist() const noexcept { return eps_dist_; }
  void set_eps_dist(double eps) { eps_dist_ = eps; }

  const Model& model() const noexcept { return model_; }

 private:
  Model model_;
  Shape sample_shape_;
  bool clamp_unit_ = false;
  std::size_t latent_dim_ = 0;
  std::optional<double> eps_dist_;
};

Tensor generate(const Generator& gen, const LatentVector& z);
/// Row i is generate(gen, zs[i]).
Tensor generate_batch(const Generator& gen, const std::vector<LatentVector>& zs);

/// Posterior mean. VAE only.
LatentVector encode(const Generator& gen, const Tensor& sample);
std::vector<LatentVector> encode_batch(const Generator& gen, const Tensor& samples);

/// Draw from the latent prior: N(0, I) for learned generators. The analytic
/// generator's prior is the equal-weight mixture of its class-conditional
/// latent distributions.
LatentVector sample_prior(const Generator& gen, Rng& rng);

/// Class-conditional latent of an analytic generator; redrawn until
/// class_oracle agrees with `cls`.
LatentVector sample_class_latent(const Generator& gen, std::size_t cls, Rng& rng);

/// Nearest center (ties to the lowest id) if within kOracleSlack * r_class.
std::optional<std::size_t> class_oracle(const Generator& gen, const LatentVector& z);

/// Throws ConfigError unless every pair of centers is more than 4 * r_class
/// apart.
Generator make_analytic_generator(AnalyticGenConfig config, Rng& rng);

/// `n` points uniformly on the sphere of radius `radius` in `dim` dimensions.
std::vector<std::vector<double>> sphere_centers(std::size_t n, std::size_t dim, double radius, Rng& rng);

/// The k-th smallest pairwise distance with k = ceil(q * M), M = number of
/// pairs (nearest-rank quantile). Exact; memory does not grow with M.
double pairwise_distance_quantile(const std::vector<LatentVector>& points, double q);

inline constexpr std::size_t kCalibrationDraws = 10000;
inline constexpr double kCalibrationQuantile = 0.3;

/// Default anchor threshold: 30th percentile of pairwise distances among
/// prior draws.
double calibrate_eps_dist(const Generator& gen, Rng& rng, std::size_t draws = kCalibrationDraws,
                          double quantile = kCalibrationQuantile);

// ---------------------------------------------------------------------------
// Training

struct VaeConfig {
  std::size_t latent_dim = 20;
  std::vector<std::size_t> hidden = {256, 128};
  std::size_t epochs = 1000;
  double lr = 0.001;
  double kl_weight = 1.0;
  std::size_t batch_size = 32;
  bool clamp_unit = false;
};

struct TrainingLog {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

/// Standard ELBO training: squared-error reconstruction plus KL to N(0, I)
/// through the reparametrized sample. `samples` is [count, ...sample_shape]
/// and carries no labels.
Generator train_vae(const Tensor& samples, const VaeConfig& config, Rng& rng, TrainingLog* log = nullptr);

/// Mean ELBO loss over `samples` with a fixed noise seed.
double vae_loss(const Generator& gen, const Tensor& samples, double kl_weight, std::uint64_t noise_seed);

struct GanConfig {
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden = {64};
  std::size_t epochs = 200;
  double lr = 2e-4;
  std::size_t batch_size = 32;
  bool clamp_unit = false;
};

struct GanTrainingLog {
  std::vector<double> discriminator_accuracy;  // per epoch, real-vs-fake
};

/// Non-saturating GAN loss. Only built with LASIUM_WITH_GAN; otherwise
/// throws UnsupportedOperation.
Generator train_gan(const Tensor& samples, const GanConfig& config, Rng& rng, GanTrainingLog* log = nullptr);

bool gan_enabled() noexcept;

// ---------------------------------------------------------------------------
// Checkpoints

io::Container to_container(const Generator& gen);
Generator from_container(const io::Container& c);
void save_generator(const std::filesystem::path& path, const Generator& gen);
Generator load_generator(const std::filesystem::path& path);

}  // namespace lasium::genmodel

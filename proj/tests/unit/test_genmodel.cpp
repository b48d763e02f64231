#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "lasium/binio.hpp"
#include "lasium/genmodel.hpp"

using namespace lasium;
using namespace lasium::genmodel;

namespace {

Generator two_class(double sep = 10.0, double r = 1.0) {
  AnalyticGenConfig cfg;
  cfg.latent_dim = 3;
  cfg.centers = {{sep, 0, 0}, {-sep, 0, 0}};
  cfg.r_class = r;
  Rng rng(1);
  return make_analytic_generator(cfg, rng);
}

Tensor repeated_point(const std::vector<double>& x, std::size_t copies) {
  std::vector<double> data;
  for (std::size_t i = 0; i < copies; ++i) data.insert(data.end(), x.begin(), x.end());
  return Tensor({copies, x.size()}, data);
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "lasium_test_genmodel";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("latent vectors are finite and non-empty") {
  CHECK_THROWS_AS(LatentVector(std::vector<double>{}), DimensionError);
  CHECK_THROWS_AS(LatentVector({1.0, NAN}), NumericsError);
  CHECK(distance(LatentVector({0, 3}), LatentVector({4, 0})) == doctest::Approx(5.0));
}

TEST_CASE("analytic identity generator returns z exactly") {
  const Generator g = two_class();
  const LatentVector z({0.25, -3.5, 7.0});
  const Tensor x = generate(g, z);
  CHECK(x.storage() == z.values());
  CHECK(generate(g, z) == x);
  CHECK_THROWS_AS(generate(g, LatentVector({1.0, 2.0})), DimensionError);
}

TEST_CASE("analytic affine generator matches the affine map") {
  AnalyticGenConfig cfg;
  cfg.latent_dim = 2;
  cfg.centers = {{5, 0}, {-5, 0}};
  cfg.output_weight = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  cfg.output_bias = {0.5, -0.5, 1.0};
  Rng rng(0);
  const Generator g = make_analytic_generator(cfg, rng);
  const Tensor x = generate(g, LatentVector({1.0, -1.0}));
  CHECK(x.storage() == std::vector<double>{1 - 2 + 0.5, 3 - 4 - 0.5, 5 - 6 + 1.0});
}

TEST_CASE("analytic generator separability") {
  CHECK_NOTHROW(two_class(10.0, 1.0));
  AnalyticGenConfig cfg;
  cfg.latent_dim = 2;
  cfg.centers = {{1, 1}, {1, 1}};
  Rng rng(0);
  CHECK_THROWS_AS(make_analytic_generator(cfg, rng), ConfigError);
  cfg.centers = {{0, 0}, {4, 0}};  // exactly 4 r apart is not enough
  CHECK_THROWS_AS(make_analytic_generator(cfg, rng), ConfigError);

  AnalyticGenConfig sphere;
  sphere.latent_dim = 16;
  sphere.n_classes = 8;
  sphere.center_radius = 10.0;
  Rng srng(7);
  const Generator g = make_analytic_generator(sphere, srng);
  const auto& centers = std::get<AnalyticModel>(g.model()).config.centers;
  REQUIRE(centers.size() == 8);
  double min_d = 1e300;
  for (std::size_t a = 0; a < 8; ++a) {
    double norm = 0.0;
    for (double v : centers[a]) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(10.0));
    for (std::size_t b = a + 1; b < 8; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < 16; ++i) s += (centers[a][i] - centers[b][i]) * (centers[a][i] - centers[b][i]);
      min_d = std::min(min_d, std::sqrt(s));
    }
  }
  CHECK(min_d > 4.0);
}

TEST_CASE("class oracle") {
  const Generator g = two_class();
  CHECK(class_oracle(g, LatentVector({10, 0, 0})) == 0u);
  CHECK(class_oracle(g, LatentVector({-10, 0, 0})) == 1u);
  CHECK_FALSE(class_oracle(g, LatentVector({0, 0, 0})).has_value());
  CHECK(class_oracle(g, LatentVector({10, 0.5, 0})) == 0u);
  CHECK(class_oracle(g, LatentVector({10, 0, 3.0})) == 0u);      // on the slack boundary
  CHECK_FALSE(class_oracle(g, LatentVector({10, 0, 3.01})).has_value());

  // Locality: every perturbation of norm <= r_class stays in class.
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> d(3);
    double n = 0.0;
    for (double& v : d) {
      v = rng.normal();
      n += v * v;
    }
    const double len = rng.uniform() / std::sqrt(n);
    const std::size_t c = rng.index(2);
    const auto& center = std::get<AnalyticModel>(g.model()).config.centers[c];
    std::vector<double> z(3);
    for (int i = 0; i < 3; ++i) z[i] = center[i] + len * d[i];
    CHECK(class_oracle(g, LatentVector(z)) == c);
  }
}

TEST_CASE("class-conditional latents agree with the oracle and have spread r") {
  AnalyticGenConfig cfg;
  cfg.latent_dim = 16;
  cfg.n_classes = 8;
  Rng rng(11);
  const Generator g = make_analytic_generator(cfg, rng);
  const auto& centers = std::get<AnalyticModel>(g.model()).config.centers;
  double sq = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(i % 8);
    const LatentVector z = sample_class_latent(g, c, rng);
    CHECK(class_oracle(g, z) == c);
    for (std::size_t k = 0; k < 16; ++k) sq += (z[k] - centers[c][k]) * (z[k] - centers[c][k]);
  }
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("pairwise distance quantile matches a full sort") {
  Rng rng(5);
  std::vector<LatentVector> pts;
  for (int i = 0; i < 300; ++i) pts.emplace_back(std::vector<double>{rng.normal(), rng.normal(), rng.normal()});
  std::vector<double> all;
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b) all.push_back(distance(pts[a], pts[b]));
  std::sort(all.begin(), all.end());
  for (double q : {0.001, 0.1, 0.3, 0.5, 0.9, 1.0}) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(all.size())));
    CHECK(pairwise_distance_quantile(pts, q) == all[k - 1]);
  }
}

TEST_CASE("single-point VAE reconstructs its point") {
  const std::vector<double> point = {0.1, 0.9, 0.4, 0.7, 0.2, 0.5};
  const Tensor data = repeated_point(point, 256);
  VaeConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden = {16};
  cfg.epochs = 200;
  cfg.clamp_unit = true;
  Rng rng(9);
  TrainingLog log;
  const Generator g = train_vae(data, cfg, rng, &log);
  CHECK(g.kind() == GeneratorKind::vae);
  CHECK(g.has_encoder());
  CHECK(g.latent_dim() == 2);
  CHECK(log.final_loss < log.initial_loss);
  CHECK(log.epoch_loss.size() == 200);

  const Tensor x = data.row(0);
  const LatentVector z1 = encode(g, x);
  const LatentVector z2 = encode(g, x);
  CHECK(z1 == z2);
  CHECK(mse(generate(g, z1), x) < 1e-2);

  CHECK_THROWS_AS(encode(g, Tensor({5}, {0, 0, 0, 0, 0})), DimensionError);
  CHECK_THROWS_AS(encode(two_class(), Tensor({3}, {0, 0, 0})), UnsupportedOperation);
  CHECK_THROWS_AS(class_oracle(g, z1), UnsupportedOperation);

  Rng zr(2);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> z = {3.0 * zr.normal(), 3.0 * zr.normal()};
    const Tensor out = generate(g, LatentVector(z));
    for (double v : out.storage()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("VAE config preconditions and defaults") {
  VaeConfig cfg;
  CHECK(cfg.latent_dim == 20);
  CHECK(cfg.kl_weight == 1.0);
  CHECK(cfg.lr == 0.001);
  Rng rng(0);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_vae(repeated_point({0.5}, 2), cfg, rng), ConfigError);

  VaeConfig img;
  img.hidden = {8};
  img.epochs = 1;
  std::vector<double> pixels(2 * 28 * 28, 0.5);
  const Generator g = train_vae(Tensor({2, 28, 28, 1}, pixels), img, rng);
  CHECK(g.latent_dim() == 20);
  CHECK(g.sample_shape() == numkit::Shape{28, 28, 1});
}

TEST_CASE("VAE reconstruction improves during training") {
  Rng data_rng(4);
  std::vector<double> data;
  for (int i = 0; i < 64; ++i) {
    const double t = data_rng.uniform();
    for (int k = 0; k < 8; ++k) data.push_back(0.5 + 0.4 * std::sin(t * 6.0 + k));
  }
  const Tensor samples({64, 8}, data);
  VaeConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden = {32};
  cfg.epochs = 1;
  Rng r1(8);
  const Generator early = train_vae(samples, cfg, r1);
  cfg.epochs = 150;
  Rng r2(8);
  const Generator late = train_vae(samples, cfg, r2);
  auto recon = [&](const Generator& g) {
    return mse(generate_batch(g, encode_batch(g, samples)), samples);
  };
  CHECK(recon(late) < recon(early));
}

TEST_CASE("VAE divergence is reported") {
  VaeConfig cfg;
  cfg.latent_dim = 1;
  cfg.hidden = {4};
  cfg.epochs = 2;
  Rng rng(0);
  CHECK_THROWS_AS(train_vae(repeated_point({1e200, -1e200}, 4), cfg, rng), TrainingDiverged);
}

TEST_CASE("generator checkpoints round-trip") {
  VaeConfig cfg;
  cfg.latent_dim = 3;
  cfg.hidden = {8};
  cfg.epochs = 3;
  cfg.clamp_unit = true;
  Rng rng(12);
  Generator vae = train_vae(repeated_point({0.2, 0.4, 0.6, 0.8}, 8), cfg, rng);
  vae.set_eps_dist(0.1 + 1e-17 * 3);
  const auto path = temp_path("vae.lgen");
  save_generator(path, vae);
  const Generator back = load_generator(path);
  CHECK(back.kind() == GeneratorKind::vae);
  CHECK(back.eps_dist() == vae.eps_dist());
  CHECK(back.clamps_to_unit());
  const LatentVector z({0.3, -1.2, 2.0});
  CHECK(generate(back, z) == generate(vae, z));
  CHECK(std::get<VaeModel>(back.model()).encoder == std::get<VaeModel>(vae.model()).encoder);

  AnalyticGenConfig acfg;
  acfg.latent_dim = 2;
  acfg.centers = {{5, 0}, {-5, 0.5}};
  acfg.r_class = 0.75;
  acfg.output_weight = Tensor({3, 2}, {1, 2, 3, 4, 5, 6});
  acfg.output_bias = {0.1, 0.2, 0.3};
  Rng arng(0);
  const Generator an = make_analytic_generator(acfg, arng);
  const auto apath = temp_path("analytic.lgen");
  save_generator(apath, an);
  const Generator aback = load_generator(apath);
  CHECK(generate(aback, LatentVector({0.7, 0.1})) == generate(an, LatentVector({0.7, 0.1})));
  CHECK(class_oracle(aback, LatentVector({-5, 1.0})) == 1u);

  auto bytes = io::read_file(path);
  bytes[0] = 'X';
  io::write_file(path, bytes);
  CHECK_THROWS_AS(load_generator(path), BadMagic);
  bytes[0] = 'L';
  bytes.resize(bytes.size() - 9);
  io::write_file(path, bytes);
  CHECK_THROWS_AS(load_generator(path), TruncatedFile);
}

TEST_CASE("GAN training" * doctest::skip(!gan_enabled())) {
  // Two Gaussian blobs in the plane.
  Rng data_rng(21);
  std::vector<double> data;
  for (int i = 0; i < 256; ++i) {
    const double cx = i % 2 == 0 ? 2.0 : -2.0;
    data.push_back(cx + 0.3 * data_rng.normal());
    data.push_back(0.3 * data_rng.normal());
  }
  const Tensor samples({256, 2}, data);
  GanConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden = {32};
  cfg.epochs = 300;
  Rng r1(5), r2(5);
  GanTrainingLog log;
  const Generator g1 = train_gan(samples, cfg, r1, &log);
  const Generator g2 = train_gan(samples, cfg, r2);
  CHECK(std::get<GanModel>(g1.model()).generator == std::get<GanModel>(g2.model()).generator);
  CHECK(g1.sample_shape() == numkit::Shape{2});
  CHECK(generate(g1, LatentVector({0.1, 0.2})).shape() == numkit::Shape{2});
  CHECK(std::abs(log.discriminator_accuracy.back() - 0.5) < 0.2);
  CHECK_FALSE(g1.has_encoder());
}

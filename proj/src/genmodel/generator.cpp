#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lasium/genmodel.hpp"

namespace lasium::genmodel {

using numkit::shape_size;
using numkit::shape_string;

LatentVector::LatentVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw DimensionError("latent vector must have positive dimension");
  if (!numkit::all_finite(values_)) throw NumericsError("latent vector has non-finite entries");
}

double distance(const LatentVector& a, const LatentVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionError("latent dims differ: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

std::size_t flat_input(const numkit::Architecture& arch) { return shape_size(arch.input_shape); }

void check_decoder(const numkit::NetworkParams& dec, const Shape& sample_shape, const char* what) {
  if (dec.arch.input_shape.size() != 1) throw ConfigError(std::string(what) + " must take a flat latent input");
  if (dec.arch.output_dim() != shape_size(sample_shape)) {
    throw DimensionError(std::string(what) + " output " + std::to_string(dec.arch.output_dim()) +
                         " does not match sample shape " + shape_string(sample_shape));
  }
}

std::size_t model_latent_dim(const Generator::Model& m, const Shape& sample_shape) {
  if (const auto* v = std::get_if<VaeModel>(&m)) {
    check_decoder(v->decoder, sample_shape, "decoder");
    const std::size_t latent = v->decoder.arch.input_shape[0];
    if (flat_input(v->encoder.arch) != shape_size(sample_shape)) {
      throw DimensionError("encoder input does not match sample shape " + shape_string(sample_shape));
    }
    if (v->encoder.arch.output_dim() != 2 * latent) {
      throw DimensionError("encoder must output mean and log-variance for " + std::to_string(latent) +
                           " latent dims");
    }
    return latent;
  }
  if (const auto* g = std::get_if<GanModel>(&m)) {
    check_decoder(g->generator, sample_shape, "generator");
    return g->generator.arch.input_shape[0];
  }
  const auto& cfg = std::get<AnalyticModel>(m).config;
  const std::size_t out = cfg.output_weight.empty() ? cfg.latent_dim : cfg.output_weight.dim(0);
  if (shape_size(sample_shape) != out) {
    throw DimensionError("analytic output dim does not match sample shape " + shape_string(sample_shape));
  }
  return cfg.latent_dim;
}

void check_latent(const Generator& gen, const LatentVector& z) {
  if (z.dim() != gen.latent_dim()) {
    throw DimensionError("latent vector has dim " + std::to_string(z.dim()) + ", generator expects " +
                         std::to_string(gen.latent_dim()));
  }
}

Tensor latent_batch(const std::vector<LatentVector>& zs) {
  const std::size_t d = zs.front().dim();
  std::vector<double> flat;
  flat.reserve(zs.size() * d);
  for (const auto& z : zs) flat.insert(flat.end(), z.values().begin(), z.values().end());
  return Tensor({zs.size(), d}, std::move(flat));
}

const AnalyticGenConfig& analytic_config(const Generator& gen, const char* op) {
  if (gen.kind() != GeneratorKind::analytic) {
    throw UnsupportedOperation(std::string(op) + " requires an analytic generator");
  }
  return std::get<AnalyticModel>(gen.model()).config;
}

}  // namespace

Generator::Generator(Model model, Shape sample_shape, bool clamp_unit)
    : model_(std::move(model)), sample_shape_(std::move(sample_shape)), clamp_unit_(clamp_unit) {
  if (sample_shape_.empty() || shape_size(sample_shape_) == 0) throw DimensionError("empty sample shape");
  latent_dim_ = model_latent_dim(model_, sample_shape_);
  if (latent_dim_ == 0) throw ConfigError("latent_dim must be at least 1");
}

Tensor generate_batch(const Generator& gen, const std::vector<LatentVector>& zs) {
  if (zs.empty()) throw DimensionError("generate_batch needs at least one latent vector");
  for (const auto& z : zs) check_latent(gen, z);
  const std::size_t n = zs.size();
  const std::size_t out_dim = shape_size(gen.sample_shape());
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), gen.sample_shape().begin(), gen.sample_shape().end());

  std::vector<double> out;
  if (const auto* v = std::get_if<VaeModel>(&gen.model())) {
    out = numkit::forward(v->decoder, latent_batch(zs)).storage();
  } else if (const auto* g = std::get_if<GanModel>(&gen.model())) {
    out = numkit::forward(g->generator, latent_batch(zs)).storage();
  } else {
    const auto& cfg = std::get<AnalyticModel>(gen.model()).config;
    const std::size_t d = gen.latent_dim();
    out.assign(n * out_dim, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& z = zs[r].values();
      double* x = out.data() + r * out_dim;
      if (cfg.output_weight.empty()) {
        std::copy(z.begin(), z.end(), x);
      } else {
        const double* w = cfg.output_weight.data();
        for (std::size_t o = 0; o < out_dim; ++o) {
          double s = 0.0;
          for (std::size_t i = 0; i < d; ++i) s += w[o * d + i] * z[i];
          x[o] = s;
        }
      }
      if (!cfg.output_bias.empty()) {
        for (std::size_t o = 0; o < out_dim; ++o) x[o] += cfg.output_bias[o];
      }
    }
  }
  if (gen.clamps_to_unit()) {
    for (double& x : out) x = std::clamp(x, 0.0, 1.0);
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor generate(const Generator& gen, const LatentVector& z) {
  return generate_batch(gen, {z}).reshaped(gen.sample_shape());
}

std::vector<LatentVector> encode_batch(const Generator& gen, const Tensor& samples) {
  const auto* v = std::get_if<VaeModel>(&gen.model());
  if (v == nullptr) throw UnsupportedOperation("encode requires a VAE generator");
  const Shape& s = samples.shape();
  if (s.size() != gen.sample_shape().size() + 1 || !std::equal(s.begin() + 1, s.end(), gen.sample_shape().begin())) {
    throw DimensionError("samples of shape " + shape_string(s) + " do not match generator sample shape " +
                         shape_string(gen.sample_shape()));
  }
  const std::size_t n = s[0];
  const std::size_t d = gen.latent_dim();
  const Tensor out = numkit::forward(v->encoder, samples.reshaped(Shape{n, shape_size(gen.sample_shape())}));
  std::vector<LatentVector> zs;
  zs.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = out.data() + r * 2 * d;
    zs.emplace_back(std::vector<double>(row, row + d));
  }
  return zs;
}

LatentVector encode(const Generator& gen, const Tensor& sample) {
  if (gen.kind() != GeneratorKind::vae) throw UnsupportedOperation("encode requires a VAE generator");
  if (sample.shape() != gen.sample_shape()) {
    throw DimensionError("sample of shape " + shape_string(sample.shape()) + " does not match generator sample shape " +
                         shape_string(gen.sample_shape()));
  }
  Shape batched{1};
  batched.insert(batched.end(), sample.shape().begin(), sample.shape().end());
  return encode_batch(gen, sample.reshaped(batched)).front();
}

LatentVector sample_class_latent(const Generator& gen, std::size_t cls, Rng& rng) {
  const auto& cfg = analytic_config(gen, "sample_class_latent");
  if (cls >= cfg.centers.size()) throw ConfigError("class id " + std::to_string(cls) + " out of range");
  const double spread = cfg.latent_spread > 0.0 ? cfg.latent_spread
                                                : cfg.r_class / std::sqrt(static_cast<double>(cfg.latent_dim));
  // Acceptance is ~1 for any sane spread; the cap only guards misuse.
  for (int attempt = 0; attempt < 100000; ++attempt) {
    std::vector<double> z(cfg.latent_dim);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = cfg.centers[cls][i] + spread * rng.normal();
    LatentVector lv(std::move(z));
    if (class_oracle(gen, lv) == cls) return lv;
  }
  throw ConfigError("latent_spread too large for the oracle radius");
}

LatentVector sample_prior(const Generator& gen, Rng& rng) {
  if (gen.kind() == GeneratorKind::analytic) {
    const auto& cfg = std::get<AnalyticModel>(gen.model()).config;
    return sample_class_latent(gen, rng.index(cfg.centers.size()), rng);
  }
  std::vector<double> z(gen.latent_dim());
  for (double& x : z) x = rng.normal();
  return LatentVector(std::move(z));
}

std::optional<std::size_t> class_oracle(const Generator& gen, const LatentVector& z) {
  const auto& cfg = analytic_config(gen, "class_oracle");
  check_latent(gen, z);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cfg.centers.size(); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.dim(); ++i) {
      const double d = z[i] - cfg.centers[c][i];
      s += d * d;
    }
    if (s < best_d) {
      best_d = s;
      best = c;
    }
  }
  if (std::sqrt(best_d) <= kOracleSlack * cfg.r_class) return best;
  return std::nullopt;
}

double pairwise_distance_quantile(const std::vector<LatentVector>& points, double q) {
  const std::size_t n = points.size();
  if (n < 2) throw ConfigError("distance quantile needs at least two points");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("quantile must be in (0, 1]");
  const std::size_t d = points.front().dim();
  for (const auto& p : points) {
    if (p.dim() != d) throw DimensionError("points have mixed dimensions");
  }

  std::vector<double> flat;
  flat.reserve(n * d);
  for (const auto& p : points) flat.insert(flat.end(), p.values().begin(), p.values().end());
  auto sq = [&](std::size_t a, std::size_t b) {
    const double* x = flat.data() + a * d;
    const double* y = flat.data() + b * d;
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double t = x[i] - y[i];
      s += t * t;
    }
    return s;
  };
  auto for_each_pair = [&](auto&& fn) {
    for (std::size_t a = 0; a + 1 < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) fn(sq(a, b));
  };

  const std::size_t pairs = n * (n - 1) / 2;
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(pairs)));
  const std::size_t k = std::clamp<std::size_t>(rank, 1, pairs);

  // Histogram selection over squared distances (monotone in distance).
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for_each_pair([&](double s) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  });
  if (lo == hi) return std::sqrt(lo);

  constexpr std::size_t kBins = 1 << 16;
  const double width = (hi - lo) / static_cast<double>(kBins);
  auto bin_of = [&](double s) {
    return std::min(kBins - 1, static_cast<std::size_t>((s - lo) / width));
  };
  std::vector<std::size_t> counts(kBins, 0);
  for_each_pair([&](double s) { ++counts[bin_of(s)]; });

  std::size_t below = 0, bin = 0;
  while (below + counts[bin] < k) below += counts[bin++];

  std::vector<double> in_bin;
  in_bin.reserve(counts[bin]);
  for_each_pair([&](double s) {
    if (bin_of(s) == bin) in_bin.push_back(s);
  });
  const auto nth = in_bin.begin() + static_cast<std::ptrdiff_t>(k - below - 1);
  std::nth_element(in_bin.begin(), nth, in_bin.end());
  return std::sqrt(*nth);
}

double calibrate_eps_dist(const Generator& gen, Rng& rng, std::size_t draws, double quantile) {
  std::vector<LatentVector> zs;
  zs.reserve(draws);
  for (std::size_t i = 0; i < draws; ++i) zs.push_back(sample_prior(gen, rng));
  return pairwise_distance_quantile(zs, quantile);
}

}  // namespace lasium::genmodel

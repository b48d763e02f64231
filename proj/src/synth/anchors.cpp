#include <cmath>
#include <numeric>
#include <string>

#include "lasium/synth.hpp"

namespace lasium::synth {

namespace {

bool far_from_all(const LatentVector& z, const std::vector<LatentVector>& accepted, double eps_dist) {
  for (const auto& a : accepted) {
    if (genmodel::distance(z, a) < eps_dist) return false;
  }
  return true;
}

void check_request(std::size_t n, double eps_dist, std::size_t max_attempts) {
  if (n < 2) throw ConfigError("anchor sets need N >= 2");
  if (!(eps_dist >= 0.0) || !std::isfinite(eps_dist)) throw ConfigError("eps_dist must be finite and >= 0");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

}  // namespace

AnchorSet sample_anchors(const Generator& gen, std::size_t n, double eps_dist, std::size_t max_attempts, Rng& rng) {
  check_request(n, eps_dist, max_attempts);
  AnchorSet set;
  set.vectors.reserve(n);
  while (set.vectors.size() < n) {
    std::size_t tries = 0;
    for (;;) {
      if (tries == max_attempts) throw AnchorRejectionExhausted(tries);
      ++tries;
      ++set.draws;
      LatentVector z = genmodel::sample_prior(gen, rng);
      if (far_from_all(z, set.vectors, eps_dist)) {
        set.vectors.push_back(std::move(z));
        break;
      }
    }
  }
  return set;
}

AnchorSet sample_anchors_from_data(const Generator& gen, const data::Tensor& samples, std::size_t n, double eps_dist,
                                   std::size_t max_attempts, Rng& rng) {
  check_request(n, eps_dist, max_attempts);
  if (!gen.has_encoder()) throw UnsupportedOperation("data anchors need a generator with an encoder");
  if (samples.rank() < 2) throw DimensionError("anchor data must be [count, ...sample_shape]");
  const std::size_t count = samples.dim(0);
  if (count < n) {
    throw ConfigError("anchor data has " + std::to_string(count) + " samples, need at least " + std::to_string(n));
  }

  // Lazy Fisher-Yates: pool[0, used) are the rows already tried.
  std::vector<std::size_t> pool(count);
  std::iota(pool.begin(), pool.end(), 0);
  std::size_t used = 0;

  AnchorSet set;
  std::vector<data::Tensor> rows;
  while (set.vectors.size() < n) {
    std::size_t tries = 0;
    for (;;) {
      if (tries == max_attempts || used == count) throw AnchorRejectionExhausted(tries);
      ++tries;
      ++set.draws;
      const std::size_t j = used + rng.index(count - used);
      std::swap(pool[used], pool[j]);
      const std::size_t idx = pool[used++];
      data::Tensor row = samples.row(idx).reshaped(gen.sample_shape());
      LatentVector z = genmodel::encode(gen, row);
      if (far_from_all(z, set.vectors, eps_dist)) {
        set.vectors.push_back(std::move(z));
        set.source_indices.push_back(idx);
        rows.push_back(std::move(row));
        break;
      }
    }
  }
  set.sources = numkit::stack(rows);
  return set;
}

}  // namespace lasium::synth

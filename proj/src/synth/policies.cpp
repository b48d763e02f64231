#include <cmath>
#include <cstdio>
#include <string>

#include "lasium/synth.hpp"

namespace lasium::synth {

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
}

std::string fmt(const char* name, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s=%g", name, v);
  return buf;
}

}  // namespace

void TaskPolicy::validate() const {
  if (const auto* n = std::get_if<NoisePolicy>(&variant)) {
    if (!(n->sigma > 0.0) || !std::isfinite(n->sigma)) throw ConfigError("LASIUM-N needs finite sigma > 0");
  } else {
    const double alpha = std::holds_alternative<RandomOutPolicy>(variant) ? std::get<RandomOutPolicy>(variant).alpha
                                                                          : std::get<OtherClassesPolicy>(variant).alpha;
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  }
  if (!(eps_dist >= 0.0) || !std::isfinite(eps_dist)) throw ConfigError("eps_dist must be finite and >= 0");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

std::string TaskPolicy::name() const {
  switch (variant.index()) {
    case 0: return "lasium-n";
    case 1: return "lasium-ro";
    default: return "lasium-oc";
  }
}

std::string TaskPolicy::tag() const {
  if (const auto* n = std::get_if<NoisePolicy>(&variant)) return name() + "(" + fmt("sigma", n->sigma) + ")";
  if (const auto* r = std::get_if<RandomOutPolicy>(&variant)) return name() + "(" + fmt("alpha", r->alpha) + ")";
  return name() + "(" + fmt("alpha", std::get<OtherClassesPolicy>(variant).alpha) + ")";
}

std::vector<LatentVector> policy_noise(const std::vector<LatentVector>& anchors, double sigma, Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be finite and >= 0");
  std::vector<LatentVector> out;
  out.reserve(anchors.size());
  for (const auto& a : anchors) {
    std::vector<double> z = a.values();
    for (double& x : z) x += sigma * rng.normal();
    out.emplace_back(std::move(z));
  }
  return out;
}

std::vector<LatentVector> interpolate(const std::vector<LatentVector>& anchors,
                                      const std::vector<LatentVector>& targets, double alpha) {
  check_alpha(alpha);
  if (anchors.size() != targets.size()) throw DimensionError("one target per anchor required");
  std::vector<LatentVector> out;
  out.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto& z = anchors[i].values();
    const auto& v = targets[i].values();
    if (z.size() != v.size()) throw DimensionError("target dimension differs from anchor");
    std::vector<double> w(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) w[k] = (1.0 - alpha) * z[k] + alpha * v[k];
    out.emplace_back(std::move(w));
  }
  return out;
}

std::vector<LatentVector> policy_random_out(const std::vector<LatentVector>& anchors, double alpha,
                                            const Generator& gen, double eps_dist, std::size_t max_attempts,
                                            Rng& rng) {
  check_alpha(alpha);
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  std::vector<LatentVector> targets;
  targets.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    std::size_t tries = 0;
    for (;;) {
      if (tries == max_attempts) throw AnchorRejectionExhausted(tries);
      ++tries;
      LatentVector v = genmodel::sample_prior(gen, rng);
      bool ok = true;
      for (const auto& z : anchors) {
        if (genmodel::distance(v, z) < eps_dist) {
          ok = false;
          break;
        }
      }
      if (ok) {
        targets.push_back(std::move(v));
        break;
      }
    }
  }
  return interpolate(anchors, targets, alpha);
}

std::size_t other_class_target(std::size_t i, std::size_t omega, std::size_t n) {
  if (n < 2) throw ConfigError("LASIUM-OC needs N >= 2");
  if (omega < 1) throw ConfigError("candidate round omega is 1-based");
  if (i >= n) throw ConfigError("anchor index out of range");
  return (i + 1 + (omega - 1) % (n - 1)) % n;
}

std::vector<LatentVector> policy_other_classes(const std::vector<LatentVector>& anchors, double alpha,
                                               std::size_t omega) {
  const std::size_t n = anchors.size();
  if (n < 2) throw ConfigError("LASIUM-OC needs N >= 2");
  std::vector<LatentVector> targets;
  targets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) targets.push_back(anchors[other_class_target(i, omega, n)]);
  return interpolate(anchors, targets, alpha);
}

}  // namespace lasium::synth

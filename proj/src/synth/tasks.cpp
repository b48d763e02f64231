#include <string>

#include "lasium/parallel.hpp"
#include "lasium/synth.hpp"

namespace lasium::synth {

namespace {

std::vector<LatentVector> candidates(const Generator& gen, const TaskPolicy& policy,
                                     const std::vector<LatentVector>& anchors, std::size_t omega, Rng& rng) {
  if (const auto* n = std::get_if<NoisePolicy>(&policy.variant)) return policy_noise(anchors, n->sigma, rng);
  if (const auto* r = std::get_if<RandomOutPolicy>(&policy.variant)) {
    return policy_random_out(anchors, r->alpha, gen, policy.eps_dist, policy.max_attempts, rng);
  }
  return policy_other_classes(anchors, std::get<OtherClassesPolicy>(policy.variant).alpha, omega);
}

}  // namespace

data::MetaTask generate_task(const Generator& gen, const TaskPolicy& policy, std::size_t n_way, std::size_t k_tr,
                             std::size_t k_val, Rng& rng, const data::Tensor* anchor_data) {
  policy.validate();
  if (n_way < 2) throw ConfigError("tasks need N >= 2");
  if (k_tr < 1) throw ConfigError("tasks need K_tr >= 1");
  const bool from_data = policy.anchor_source == AnchorSource::data;
  if (from_data && anchor_data == nullptr) throw ConfigError("data anchors requested without anchor data");

  const AnchorSet anchors =
      from_data ? sample_anchors_from_data(gen, *anchor_data, n_way, policy.eps_dist, policy.max_attempts, rng)
                : sample_anchors(gen, n_way, policy.eps_dist, policy.max_attempts, rng);

  const std::size_t per_group = k_tr + k_val;
  // groups[l][w]: anchor at w = 0, round-w candidate after.
  std::vector<std::vector<LatentVector>> groups(n_way);
  for (std::size_t l = 0; l < n_way; ++l) groups[l].push_back(anchors.vectors[l]);
  for (std::size_t omega = 1; omega < per_group; ++omega) {
    std::vector<LatentVector> round = candidates(gen, policy, anchors.vectors, omega, rng);
    for (std::size_t l = 0; l < n_way; ++l) groups[l].push_back(std::move(round[l]));
  }

  data::MetaTask t;
  t.n_way = n_way;
  t.k_tr = k_tr;
  t.k_val = k_val;
  t.policy = policy.tag();
  t.anchor_images_from_data = from_data;
  for (std::size_t l = 0; l < n_way; ++l) {
    for (std::size_t w = 0; w < per_group; ++w) {
      (w < k_tr ? t.train_latents : t.val_latents).push_back(groups[l][w]);
    }
  }
  t.train_x = genmodel::generate_batch(gen, t.train_latents);
  if (from_data) {
    const std::size_t stride = t.train_x.size() / t.train_x.dim(0);
    for (std::size_t l = 0; l < n_way; ++l) {
      const double* src = anchors.sources.data() + l * stride;
      std::copy(src, src + stride, t.train_x.data() + l * k_tr * stride);
    }
  }
  t.train_y = data::grouped_labels(n_way, k_tr);
  if (k_val > 0) {
    t.val_x = genmodel::generate_batch(gen, t.val_latents);
    t.val_y = data::grouped_labels(n_way, k_val);
  }
  return t;
}

data::MetaTask generate_task_seeded(const Generator& gen, const TaskPolicy& policy, std::size_t n_way,
                                    std::size_t k_tr, std::size_t k_val, std::uint64_t seed,
                                    const data::Tensor* anchor_data) {
  Rng rng(seed);
  data::MetaTask t = generate_task(gen, policy, n_way, k_tr, k_val, rng, anchor_data);
  t.seed = seed;
  return t;
}

std::vector<data::MetaTask> generate_meta_batch(const Generator& gen, const TaskPolicy& policy, std::size_t n_way,
                                                std::size_t k_tr, std::size_t k_val, std::size_t batch_size,
                                                Rng& rng, const data::Tensor* anchor_data, std::size_t threads) {
  if (batch_size < 1) throw ConfigError("meta-batch size must be >= 1");
  const std::uint64_t batch_seed = rng.next_u64();
  std::vector<data::MetaTask> tasks(batch_size);
  parallel_for(batch_size, threads, [&](std::size_t i) {
    tasks[i] = generate_task_seeded(gen, policy, n_way, k_tr, k_val, derive_seed(batch_seed, i), anchor_data);
  });
  return tasks;
}

void validate_task(const data::MetaTask& t) {
  auto check_rows = [&](const data::Tensor& x, const std::vector<std::uint32_t>& y, std::size_t k, const char* part) {
    if (y.size() != t.n_way * k) throw ConfigError(std::string(part) + " label count is not N * K");
    if (k > 0 && (x.empty() || x.dim(0) != y.size())) throw ConfigError(std::string(part) + " rows do not match labels");
    std::vector<std::size_t> counts(t.n_way, 0);
    for (std::uint32_t l : y) {
      if (l >= t.n_way) throw ConfigError(std::string(part) + " label out of range");
      ++counts[l];
    }
    for (std::size_t c : counts) {
      if (c != k) throw ConfigError(std::string(part) + " labels are not balanced");
    }
  };
  if (t.n_way < 2 || t.k_tr < 1) throw ConfigError("task needs N >= 2 and K_tr >= 1");
  check_rows(t.train_x, t.train_y, t.k_tr, "train");
  check_rows(t.val_x, t.val_y, t.k_val, "val");
  if (!t.train_latents.empty() &&
      (t.train_latents.size() != t.train_y.size() || t.val_latents.size() != t.val_y.size())) {
    throw ConfigError("latent provenance does not cover every row");
  }
}

}  // namespace lasium::synth

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "lasium/data.hpp"
#include "lasium/genmodel.hpp"

namespace lasium::synth {

using genmodel::Generator;
using genmodel::LatentVector;

/// LASIUM-N: z' = z + e, e ~ N(0, sigma^2 I).
struct NoisePolicy {
  double sigma = 0.0;
};
/// LASIUM-RO: z' = z + alpha (v - z), v a fresh out-of-class prior draw.
struct RandomOutPolicy {
  double alpha = 0.4;
};
/// LASIUM-OC: z' = z + alpha (z_t - z), z_t another anchor of the task.
struct OtherClassesPolicy {
  double alpha = 0.2;
};

enum class AnchorSource { prior, data };

struct TaskPolicy {
  std::variant<NoisePolicy, RandomOutPolicy, OtherClassesPolicy> variant = RandomOutPolicy{};
  double eps_dist = 0.0;
  std::size_t max_attempts = 10000;
  AnchorSource anchor_source = AnchorSource::prior;

  /// sigma finite and > 0, alpha in (0, 1], eps_dist >= 0, max_attempts >= 1.
  void validate() const;
  /// "lasium-n", "lasium-ro" or "lasium-oc".
  std::string name() const;
  /// Name plus parameters, e.g. "lasium-ro(alpha=0.4)".
  std::string tag() const;
};

struct AnchorSet {
  std::vector<LatentVector> vectors;
  /// Data-anchored sets only: the dataset rows that were encoded.
  std::vector<std::size_t> source_indices;
  data::Tensor sources;  // [N, ...sample_shape], empty for prior anchors
  std::size_t draws = 0;  // prior samples or encodings consumed

  bool from_data() const noexcept { return !source_indices.empty(); }
};

/// Sequential rejection sampling: each anchor is redrawn from the prior until
/// it is at least eps_dist from every anchor accepted before it. A slot that
/// needs more than max_attempts draws raises AnchorRejectionExhausted.
AnchorSet sample_anchors(const Generator& gen, std::size_t n, double eps_dist, std::size_t max_attempts, Rng& rng);

/// As sample_anchors, but candidates are posterior means of distinct rows of
/// `samples` ([count, ...sample_shape]). Requires a generator with an encoder.
AnchorSet sample_anchors_from_data(const Generator& gen, const data::Tensor& samples, std::size_t n, double eps_dist,
                                   std::size_t max_attempts, Rng& rng);

/// Policies accept the degenerate sigma = 0 / alpha = 0 for testing;
/// TaskPolicy::validate is stricter.
std::vector<LatentVector> policy_noise(const std::vector<LatentVector>& anchors, double sigma, Rng& rng);

std::vector<LatentVector> policy_random_out(const std::vector<LatentVector>& anchors, double alpha,
                                            const Generator& gen, double eps_dist, std::size_t max_attempts,
                                            Rng& rng);

/// Interpolation toward an explicit target per anchor (shared by RO and OC).
std::vector<LatentVector> interpolate(const std::vector<LatentVector>& anchors,
                                      const std::vector<LatentVector>& targets, double alpha);

/// Index of the anchor that anchor i moves toward on candidate round omega
/// (1-based): cycles over the n-1 other anchors in index order.
std::size_t other_class_target(std::size_t i, std::size_t omega, std::size_t n);

std::vector<LatentVector> policy_other_classes(const std::vector<LatentVector>& anchors, double alpha,
                                               std::size_t omega);

/// One synthetic N-way task. Group l holds [anchor, then K_tr + K_val - 1
/// policy outputs in round order]; its first K_tr vectors are training rows
/// and the last K_val are validation rows. With data anchors, `anchor_data`
/// supplies the unlabeled pool and each anchor's image is its source row.
data::MetaTask generate_task(const Generator& gen, const TaskPolicy& policy, std::size_t n_way, std::size_t k_tr,
                             std::size_t k_val, Rng& rng, const data::Tensor* anchor_data = nullptr);

/// Task i is generated from Rng(derive_seed(batch_seed, i)), where batch_seed
/// is one draw from `rng`. Results do not depend on `threads`.
std::vector<data::MetaTask> generate_meta_batch(const Generator& gen, const TaskPolicy& policy, std::size_t n_way,
                                                std::size_t k_tr, std::size_t k_val, std::size_t batch_size,
                                                Rng& rng, const data::Tensor* anchor_data = nullptr,
                                                std::size_t threads = 1);

/// Task generation from an explicit seed, as used by generate_meta_batch.
data::MetaTask generate_task_seeded(const Generator& gen, const TaskPolicy& policy, std::size_t n_way,
                                    std::size_t k_tr, std::size_t k_val, std::uint64_t seed,
                                    const data::Tensor* anchor_data = nullptr);

/// Label balance and row counts; throws ConfigError on violation.
void validate_task(const data::MetaTask& task);

// ---------------------------------------------------------------------------
// Task dumps
//
// <dir>/meta.json        flat manifest (n_way, k_tr, k_val, policy, seed, ...)
// <dir>/train.ldat       training rows, f64 LDAT
// <dir>/val.ldat         validation rows (absent when k_val == 0)
// <dir>/provenance.bin   latent of every row, train then val, f64 LE
// <dir>/sheet.pgm        contact sheet: one column per label, train rows on top

void dump_task(const std::filesystem::path& dir, const data::MetaTask& task);
data::MetaTask read_task_dump(const std::filesystem::path& dir);

struct ContactSheet {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};
/// Cells are H x W for image samples and 1 x D strips for vectors.
ContactSheet contact_sheet(const data::MetaTask& task);
void write_pgm(const std::filesystem::path& path, const ContactSheet& sheet);

}  // namespace lasium::synth

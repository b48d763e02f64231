#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lasium/genmodel.hpp"
#include "lasium/tensor.hpp"

namespace lasium::data {

using numkit::Shape;
using numkit::Tensor;

enum class SampleKind : std::uint8_t { image_u8 = 0, vector_f64 = 1 };

/// Samples with dense integer labels. Image pixels are held as doubles in
/// [0, 1] (stored as u8 / 255 on disk).
class LabeledDataset {
 public:
  LabeledDataset() = default;
  /// Labels must be dense in 0..n_classes-1 with every class non-empty.
  LabeledDataset(Tensor samples, std::vector<std::uint32_t> labels, SampleKind kind);

  const Tensor& samples() const noexcept { return samples_; }
  const std::vector<std::uint32_t>& labels() const noexcept { return labels_; }
  SampleKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t n_classes() const noexcept { return by_class_.size(); }
  Shape sample_shape() const;
  const std::vector<std::size_t>& class_indices(std::uint32_t cls) const { return by_class_.at(cls); }

  /// Original class id of each dense label. Identity unless this dataset was
  /// produced by subset_classes.
  const std::vector<std::uint32_t>& class_ids() const noexcept { return class_ids_; }

  /// Samples at `indices`, stacked as [indices.size(), ...sample_shape].
  Tensor gather(const std::vector<std::size_t>& indices) const;

  /// Only the listed classes, relabelled 0..k-1 in list order.
  LabeledDataset subset_classes(const std::vector<std::uint32_t>& classes) const;

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.kind_ == b.kind_ && a.samples_ == b.samples_ && a.labels_ == b.labels_;
  }

 private:
  Tensor samples_;
  std::vector<std::uint32_t> labels_;
  SampleKind kind_ = SampleKind::vector_f64;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<std::uint32_t> class_ids_;
};

// ---------------------------------------------------------------------------
// LDAT files
//
//   magic "LDAT" | u16 version | u8 dtype | u8 rank | u32 dims[rank]
//   | u32 n_classes | u32 labels[count] | payload
//
// dims[0] is the sample count. Payload is u8 pixels (dtype 0) or f64 values
// (dtype 1), row-major. Little-endian throughout.

inline constexpr std::uint16_t kLdatVersion = 1;

std::vector<std::uint8_t> encode_ldat(const Tensor& samples, const std::vector<std::uint32_t>& labels,
                                      std::uint32_t n_classes, SampleKind kind);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// Raw LDAT contents without the dataset invariants (task dumps may have
/// classes with zero validation samples).
struct LdatContents {
  SampleKind kind = SampleKind::vector_f64;
  Tensor samples;
  std::vector<std::uint32_t> labels;
  std::uint32_t n_classes = 0;
};
LdatContents read_ldat(const std::filesystem::path& path);
void write_ldat(const std::filesystem::path& path, const Tensor& samples, const std::vector<std::uint32_t>& labels,
                std::uint32_t n_classes, SampleKind kind);

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct SyntheticOptions {
  double r_class = 1.0;
  double center_radius = 10.0;
  /// 0 keeps samples in latent coordinates (identity output map).
  std::size_t sample_dim = 0;
  /// Output weights are N(0, output_scale^2 / latent_dim).
  double output_scale = 1.0;
};

struct SyntheticData {
  LabeledDataset dataset;
  genmodel::Generator generator;
  std::vector<genmodel::LatentVector> latents;  // generating latent of each sample
};

/// Class centers on a sphere, per-class samples drawn around them and decoded
/// by an analytic generator. Labels equal the oracle class of each latent.
SyntheticData make_synthetic(std::size_t n_classes, std::size_t per_class, std::size_t latent_dim,
                             std::uint64_t seed, const SyntheticOptions& options = {});

// ---------------------------------------------------------------------------
// Class splits and labeled episodes

struct MetaSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> val;
  std::vector<std::uint32_t> test;
};

/// Seeded shuffle of class ids, then a contiguous partition with
/// round(f0 * n) train and round(f1 * n) val classes.
MetaSplit split_classes(std::size_t n_classes, const std::array<double, 3>& fractions, std::uint64_t seed);

/// A few-shot task. Labels are 0..n_way-1 and rows are grouped by label:
/// train row l*k_tr + j and val row l*k_val + j belong to label l.
struct MetaTask {
  std::size_t n_way = 0;
  std::size_t k_tr = 0;
  std::size_t k_val = 0;
  Tensor train_x;
  std::vector<std::uint32_t> train_y;
  Tensor val_x;  // empty when k_val == 0
  std::vector<std::uint32_t> val_y;

  // Provenance. Synthesized tasks record the latent of every row; labeled
  // episodes record dataset indices and source classes instead.
  std::string policy;
  std::uint64_t seed = 0;
  std::vector<genmodel::LatentVector> train_latents;
  std::vector<genmodel::LatentVector> val_latents;
  std::vector<std::size_t> train_sources;
  std::vector<std::size_t> val_sources;
  std::vector<std::uint32_t> source_classes;  // dataset class of each label
  bool anchor_images_from_data = false;       // anchor rows hold source images
};

/// N distinct classes from `classes`, then K_tr + K_val distinct samples per
/// class, all without replacement.
MetaTask sample_supervised_task(const LabeledDataset& ds, const std::vector<std::uint32_t>& classes,
                                std::size_t n_way, std::size_t k_tr, std::size_t k_val, Rng& rng);

/// Labels for grouped rows: label l repeated `per_label` times.
std::vector<std::uint32_t> grouped_labels(std::size_t n_way, std::size_t per_label);

}  // namespace lasium::data

#include <algorithm>
#include <string>

#include "lasium/data.hpp"

namespace lasium::data {

LabeledDataset::LabeledDataset(Tensor samples, std::vector<std::uint32_t> labels, SampleKind kind)
    : samples_(std::move(samples)), labels_(std::move(labels)), kind_(kind) {
  if (samples_.rank() < 2) throw DimensionError("dataset samples must be [count, ...sample_shape]");
  if (samples_.dim(0) != labels_.size()) {
    throw DimensionError("dataset has " + std::to_string(samples_.dim(0)) + " samples but " +
                         std::to_string(labels_.size()) + " labels");
  }
  if (kind_ == SampleKind::image_u8) {
    for (double v : samples_.storage()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("image pixels must lie in [0, 1]");
    }
  } else if (!numkit::all_finite(samples_.values())) {
    throw NumericsError("dataset has non-finite values");
  }
  const std::uint32_t n_classes = labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end()) + 1;
  by_class_.assign(n_classes, {});
  for (std::size_t i = 0; i < labels_.size(); ++i) by_class_[labels_[i]].push_back(i);
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    if (by_class_[c].empty()) throw ConfigError("labels are not dense: class " + std::to_string(c) + " is empty");
  }
  class_ids_.resize(n_classes);
  for (std::uint32_t c = 0; c < n_classes; ++c) class_ids_[c] = c;
}

Shape LabeledDataset::sample_shape() const {
  return Shape(samples_.shape().begin() + 1, samples_.shape().end());
}

Tensor LabeledDataset::gather(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw DimensionError("gather needs at least one index");
  const std::size_t stride = samples_.size() / samples_.dim(0);
  std::vector<double> out;
  out.reserve(indices.size() * stride);
  for (std::size_t i : indices) {
    if (i >= size()) throw DimensionError("sample index " + std::to_string(i) + " out of range");
    const double* row = samples_.data() + i * stride;
    out.insert(out.end(), row, row + stride);
  }
  Shape shape{indices.size()};
  const Shape inner = sample_shape();
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor(std::move(shape), std::move(out));
}

LabeledDataset LabeledDataset::subset_classes(const std::vector<std::uint32_t>& classes) const {
  std::vector<std::uint32_t> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("duplicate class in subset");
  std::vector<std::size_t> rows;
  std::vector<std::uint32_t> labels;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] >= n_classes()) throw ConfigError("class " + std::to_string(classes[k]) + " out of range");
    for (std::size_t i : by_class_[classes[k]]) {
      rows.push_back(i);
      labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  LabeledDataset out(gather(rows), std::move(labels), kind_);
  for (std::size_t k = 0; k < classes.size(); ++k) out.class_ids_[k] = class_ids_[classes[k]];
  return out;
}

std::vector<std::uint32_t> grouped_labels(std::size_t n_way, std::size_t per_label) {
  std::vector<std::uint32_t> out;
  out.reserve(n_way * per_label);
  for (std::size_t l = 0; l < n_way; ++l) out.insert(out.end(), per_label, static_cast<std::uint32_t>(l));
  return out;
}

}  // namespace lasium::data

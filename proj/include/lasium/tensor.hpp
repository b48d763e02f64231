#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lasium/error.hpp"

namespace lasium::numkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape);

/// Dense row-major tensor. Every dimension is positive and
/// data.size() == product(shape).
template <class S>
class BasicTensor {
 public:
  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_dims();
    data_.assign(shape_size(shape_), S{});
  }

  BasicTensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  std::span<S> values() noexcept { return data_; }
  std::span<const S> values() const noexcept { return data_; }
  std::vector<S>& storage() & noexcept { return data_; }
  const std::vector<S>& storage() const& noexcept { return data_; }
  // By value, so iterating a temporary's storage does not dangle.
  std::vector<S> storage() && noexcept { return std::move(data_); }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  /// Same data viewed under a different shape of equal size.
  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  /// Row `i` along the leading dimension, as its own tensor.
  BasicTensor row(std::size_t i) const {
    Shape inner(shape_.begin() + 1, shape_.end());
    if (inner.empty()) inner.push_back(1);
    const std::size_t stride = shape_size(inner);
    return BasicTensor(inner, std::vector<S>(data_.begin() + static_cast<std::ptrdiff_t>(i * stride),
                                             data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride)));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<S> data_;
};

using Tensor = BasicTensor<double>;

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

/// Stack equally-shaped tensors along a new leading dimension.
Tensor stack(const std::vector<Tensor>& rows);

/// Concatenate tensors along the leading dimension.
Tensor concat_rows(const Tensor& a, const Tensor& b);

}  // namespace lasium::numkit

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lasium/rng.hpp"
#include "lasium/tensor.hpp"

namespace lasium::numkit {

enum class LayerKind { dense, conv };
enum class Activation { relu, linear };
enum class Pool { none, max2x2 };

/// One block: affine map (dense, or 3x3 stride-1 same-padded conv), then
/// optional batch norm, activation, and optional 2x2 max pooling (conv only).
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;
  bool batch_norm = false;
  Activation activation = Activation::relu;
  Pool pool = Pool::none;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Input shape is [features] for vector data or [H, W, C] for images.
/// Conv blocks must precede dense blocks; the boundary flattens
/// channel-major.
struct Architecture {
  Shape input_shape;
  std::vector<LayerSpec> layers;

  void validate() const;
  std::vector<Shape> param_shapes() const;
  std::size_t param_count() const;
  std::size_t output_dim() const;

  /// Text form, e.g. "in=28x28x1|conv:64:bn:relu:pool|dense:5:linear".
  std::string to_string() const;
  static Architecture parse(std::string_view text);

  static Architecture mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                          std::size_t outputs, bool batch_norm = false);
  /// The four-block conv stack (3x3 conv, BN, ReLU, 2x2 max-pool). With
  /// `classes` > 0 a linear dense head is appended.
  static Architecture conv4(const Shape& image_shape, std::size_t filters, std::size_t classes);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct NetworkParams {
  Architecture arch;
  std::vector<Tensor> tensors;

  std::size_t param_count() const;
  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

using GradientSet = std::vector<Tensor>;

/// He-normal weights (variance 1/fan_in for linear blocks), zero biases,
/// unit BN scale.
NetworkParams init_network(const Architecture& arch, Rng& rng);

/// Logits or embeddings, shape [batch, output_dim].
Tensor forward(const NetworkParams& net, const Tensor& batch);

enum class LossKind { softmax_cross_entropy, mean_squared_error };

struct Targets {
  std::vector<std::uint32_t> labels;  // cross-entropy
  Tensor values;                      // mean squared error, same shape as output

  static Targets classes(std::vector<std::uint32_t> labels) { return {std::move(labels), {}}; }
  static Targets regression(Tensor values) { return {{}, std::move(values)}; }
};

struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};

LossAndGrad grad(const NetworkParams& net, LossKind loss, const Tensor& batch, const Targets& targets);

double loss_value(const NetworkParams& net, LossKind loss, const Tensor& batch, const Targets& targets);

struct HessianVectorProduct {
  double loss = 0.0;
  GradientSet grads;
  GradientSet hv;
};

/// grad(θ) and H(θ)·direction in one forward-over-reverse pass.
HessianVectorProduct hessian_vector_product(const NetworkParams& net, LossKind loss,
                                            const Tensor& batch, const Targets& targets,
                                            const GradientSet& direction);

/// Loss on raw outputs plus its gradient with respect to those outputs.
struct OutputLoss {
  double loss = 0.0;
  Tensor d_output;
};
OutputLoss output_loss(LossKind loss, const Tensor& output, const Targets& targets);

namespace detail {
struct Tape;
}

/// Forward pass that keeps the activations needed by `backward`.
struct ForwardTrace {
  Tensor output;
  std::shared_ptr<const detail::Tape> tape;
};

ForwardTrace forward_trace(const NetworkParams& net, const Tensor& batch);

struct BackwardResult {
  GradientSet grads;
  Tensor input_grad;  // shaped like the batch passed to forward_trace
};

BackwardResult backward(const NetworkParams& net, const ForwardTrace& trace, const Tensor& d_output);

// GradientSet arithmetic.
GradientSet zeros_like(const std::vector<Tensor>& tensors);
void axpy(double a, const GradientSet& x, GradientSet& y);  // y += a·x
void scale(GradientSet& x, double a);
double dot(const GradientSet& a, const GradientSet& b);
std::vector<double> flatten(const std::vector<Tensor>& tensors);
void unflatten(std::span<const double> flat, std::vector<Tensor>& tensors);

/// FNV-1a over the parameter bytes; stable identity for a snapshot.
std::uint64_t params_hash(const NetworkParams& net);

}  // namespace lasium::numkit

#include "lasium/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "lasium/dual.hpp"

namespace lasium::numkit {

namespace {

constexpr double kBatchNormEps = 1e-5;

struct LayerGeometry {
  // Conv layers: input channels/height/width and output spatial size after
  // pooling. Dense layers: in_features only.
  std::size_t in_features = 0;
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t out_height = 0, out_width = 0;
};

std::vector<LayerGeometry> layer_geometry(const Architecture& arch) {
  std::vector<LayerGeometry> geo;
  geo.reserve(arch.layers.size());
  bool spatial = !arch.layers.empty() && arch.layers.front().kind == LayerKind::conv;
  std::size_t c = 0, h = 0, w = 0, features = 0;
  if (spatial) {
    h = arch.input_shape[0];
    w = arch.input_shape[1];
    c = arch.input_shape[2];
  } else {
    features = shape_size(arch.input_shape);
  }
  for (const LayerSpec& layer : arch.layers) {
    LayerGeometry g;
    if (layer.kind == LayerKind::conv) {
      g.channels = c;
      g.height = h;
      g.width = w;
      g.out_height = layer.pool == Pool::max2x2 ? h / 2 : h;
      g.out_width = layer.pool == Pool::max2x2 ? w / 2 : w;
      g.in_features = c * h * w;
      c = layer.units;
      h = g.out_height;
      w = g.out_width;
      features = c * h * w;
    } else {
      g.in_features = features;
      features = layer.units;
    }
    geo.push_back(g);
  }
  return geo;
}

std::string join_shape(const Shape& s, char sep) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(s[i]);
  }
  return out;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::size_t parse_size(std::string_view s) {
  if (s.empty()) throw ConfigError("empty number in architecture description");
  std::size_t v = 0;
  for (char ch : s) {
    if (ch < '0' || ch > '9') throw ConfigError("bad number '" + std::string(s) + "' in architecture");
    v = v * 10 + static_cast<std::size_t>(ch - '0');
  }
  return v;
}

}  // namespace

std::string shape_string(const Shape& shape) { return "[" + join_shape(shape, ',') + "]"; }

Tensor stack(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("cannot stack an empty list of tensors");
  Shape shape = rows.front().shape();
  std::vector<double> data;
  data.reserve(rows.size() * rows.front().size());
  for (const Tensor& r : rows) {
    if (r.shape() != shape) throw DimensionError("stack: mismatched shapes");
    data.insert(data.end(), r.storage().begin(), r.storage().end());
  }
  shape.insert(shape.begin(), rows.size());
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat_rows: mismatched inner shapes");
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> data = a.storage();
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// Architecture

void Architecture::validate() const {
  if (input_shape.empty()) throw ConfigError("architecture needs an input shape");
  for (std::size_t d : input_shape) {
    if (d == 0) throw ConfigError("architecture input dimensions must be positive");
  }
  if (layers.empty()) throw ConfigError("architecture needs at least one layer");
  bool seen_dense = false;
  std::size_t h = 0, w = 0;
  if (layers.front().kind == LayerKind::conv) {
    if (input_shape.size() != 3) throw ConfigError("conv input must be [H, W, C]");
    h = input_shape[0];
    w = input_shape[1];
  }
  for (const LayerSpec& layer : layers) {
    if (layer.units == 0) throw ConfigError("layer units must be positive");
    if (layer.kind == LayerKind::conv) {
      if (seen_dense) throw ConfigError("conv blocks must precede dense blocks");
      if (layer.pool == Pool::max2x2) {
        if (h < 2 || w < 2) throw ConfigError("feature map too small for 2x2 pooling");
        h /= 2;
        w /= 2;
      }
    } else {
      seen_dense = true;
      if (layer.pool != Pool::none) throw ConfigError("pooling is only defined for conv blocks");
    }
  }
}

std::vector<Shape> Architecture::param_shapes() const {
  validate();
  const auto geo = layer_geometry(*this);
  std::vector<Shape> shapes;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& layer = layers[l];
    if (layer.kind == LayerKind::conv) {
      shapes.push_back({layer.units, geo[l].channels, 3, 3});
    } else {
      shapes.push_back({layer.units, geo[l].in_features});
    }
    shapes.push_back({layer.units});
    if (layer.batch_norm) {
      shapes.push_back({layer.units});
      shapes.push_back({layer.units});
    }
  }
  return shapes;
}

std::size_t Architecture::param_count() const {
  std::size_t n = 0;
  for (const Shape& s : param_shapes()) n += shape_size(s);
  return n;
}

std::size_t Architecture::output_dim() const {
  validate();
  const auto geo = layer_geometry(*this);
  const LayerSpec& last = layers.back();
  if (last.kind == LayerKind::dense) return last.units;
  return last.units * geo.back().out_height * geo.back().out_width;
}

std::string Architecture::to_string() const {
  std::ostringstream os;
  os << "in=" << join_shape(input_shape, 'x');
  for (const LayerSpec& layer : layers) {
    os << '|' << (layer.kind == LayerKind::conv ? "conv" : "dense") << ':' << layer.units;
    if (layer.batch_norm) os << ":bn";
    os << (layer.activation == Activation::relu ? ":relu" : ":linear");
    if (layer.pool == Pool::max2x2) os << ":pool";
  }
  return os.str();
}

Architecture Architecture::parse(std::string_view text) {
  Architecture arch;
  const auto parts = split(text, '|');
  if (parts.front().substr(0, 3) != "in=") throw ConfigError("architecture must start with in=");
  for (std::string_view d : split(parts.front().substr(3), 'x')) arch.input_shape.push_back(parse_size(d));
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto fields = split(parts[i], ':');
    if (fields.size() < 2) throw ConfigError("bad layer '" + std::string(parts[i]) + "'");
    LayerSpec layer;
    if (fields[0] == "conv") {
      layer.kind = LayerKind::conv;
    } else if (fields[0] == "dense") {
      layer.kind = LayerKind::dense;
    } else {
      throw ConfigError("unknown layer kind '" + std::string(fields[0]) + "'");
    }
    layer.units = parse_size(fields[1]);
    for (std::size_t f = 2; f < fields.size(); ++f) {
      if (fields[f] == "bn") {
        layer.batch_norm = true;
      } else if (fields[f] == "relu") {
        layer.activation = Activation::relu;
      } else if (fields[f] == "linear") {
        layer.activation = Activation::linear;
      } else if (fields[f] == "pool") {
        layer.pool = Pool::max2x2;
      } else {
        throw ConfigError("unknown layer option '" + std::string(fields[f]) + "'");
      }
    }
    arch.layers.push_back(layer);
  }
  arch.validate();
  return arch;
}

Architecture Architecture::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                               std::size_t outputs, bool batch_norm) {
  Architecture arch;
  arch.input_shape = {input_dim};
  for (std::size_t h : hidden) {
    arch.layers.push_back({LayerKind::dense, h, batch_norm, Activation::relu, Pool::none});
  }
  arch.layers.push_back({LayerKind::dense, outputs, false, Activation::linear, Pool::none});
  arch.validate();
  return arch;
}

Architecture Architecture::conv4(const Shape& image_shape, std::size_t filters, std::size_t classes) {
  Architecture arch;
  arch.input_shape = image_shape;
  for (int i = 0; i < 4; ++i) {
    arch.layers.push_back({LayerKind::conv, filters, true, Activation::relu, Pool::max2x2});
  }
  if (classes > 0) {
    arch.layers.push_back({LayerKind::dense, classes, false, Activation::linear, Pool::none});
  }
  arch.validate();
  return arch;
}

std::size_t NetworkParams::param_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors) n += t.size();
  return n;
}

NetworkParams init_network(const Architecture& arch, Rng& rng) {
  NetworkParams net{arch, {}};
  const auto geo = layer_geometry(arch);
  const auto shapes = arch.param_shapes();
  std::size_t slot = 0;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& layer = arch.layers[l];
    const double fan_in = layer.kind == LayerKind::conv ? static_cast<double>(geo[l].channels * 9)
                                                        : static_cast<double>(geo[l].in_features);
    const double gain = layer.activation == Activation::relu ? 2.0 : 1.0;
    const double stddev = std::sqrt(gain / fan_in);
    Tensor weight(shapes[slot++]);
    for (double& x : weight.storage()) x = stddev * rng.normal();
    net.tensors.push_back(std::move(weight));
    net.tensors.emplace_back(shapes[slot++]);
    if (layer.batch_norm) {
      Tensor gamma(shapes[slot++]);
      std::fill(gamma.storage().begin(), gamma.storage().end(), 1.0);
      net.tensors.push_back(std::move(gamma));
      net.tensors.emplace_back(shapes[slot++]);
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Kernels, generic over double and Dual.

namespace detail {

template <class S>
struct LayerCache {
  std::vector<S> input;
  std::size_t batch = 0;
  std::vector<S> xhat;
  std::vector<S> inv_std;
  std::vector<S> pre_activation;
  std::vector<std::size_t> pool_argmax;
};

template <class S>
struct TapeT {
  std::vector<LayerCache<S>> layers;
  std::size_t batch = 0;
};

struct Tape : TapeT<double> {};

}  // namespace detail

namespace {

using detail::LayerCache;
using detail::TapeT;

template <class S>
using Params = std::vector<BasicTensor<S>>;

template <class S>
void check_finite(const std::vector<S>& xs, const char* where) {
  for (const S& x : xs) {
    if (!std::isfinite(value_of(x))) throw NumericsError(std::string("non-finite value in ") + where);
  }
}

template <class S>
void dense_forward(const std::vector<S>& x, std::size_t batch, std::size_t in, std::size_t out,
                   const BasicTensor<S>& w, const BasicTensor<S>& b, std::vector<S>& y) {
  y.assign(batch * out, S{});
  for (std::size_t n = 0; n < batch; ++n) {
    const S* xr = x.data() + n * in;
    S* yr = y.data() + n * out;
    for (std::size_t o = 0; o < out; ++o) {
      const S* wr = w.data() + o * in;
      S acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
}

template <class S>
void dense_backward(const std::vector<S>& x, std::size_t batch, std::size_t in, std::size_t out,
                    const BasicTensor<S>& w, const std::vector<S>& dy, BasicTensor<S>& dw,
                    BasicTensor<S>& db, std::vector<S>* dx) {
  for (std::size_t n = 0; n < batch; ++n) {
    const S* xr = x.data() + n * in;
    const S* dyr = dy.data() + n * out;
    for (std::size_t o = 0; o < out; ++o) {
      const S g = dyr[o];
      db[o] += g;
      S* dwr = dw.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
    }
  }
  if (dx) {
    dx->assign(batch * in, S{});
    for (std::size_t n = 0; n < batch; ++n) {
      const S* dyr = dy.data() + n * out;
      S* dxr = dx->data() + n * in;
      for (std::size_t o = 0; o < out; ++o) {
        const S g = dyr[o];
        const S* wr = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
      }
    }
  }
}

// NCHW, 3x3 kernel, stride 1, zero padding 1.
template <class S>
void conv_forward(const std::vector<S>& x, std::size_t batch, std::size_t cin, std::size_t h,
                  std::size_t w, std::size_t cout, const BasicTensor<S>& k, const BasicTensor<S>& b,
                  std::vector<S>& y) {
  const std::size_t hw = h * w;
  y.assign(batch * cout * hw, S{});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      S* yp = y.data() + (n * cout + o) * hw;
      for (std::size_t p = 0; p < hw; ++p) yp[p] = b[o];
      for (std::size_t c = 0; c < cin; ++c) {
        const S* xp = x.data() + (n * cin + c) * hw;
        const S* kp = k.data() + (o * cin + c) * 9;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const S kv = kp[kh * 3 + kw];
            const std::size_t r0 = kh == 0 ? 1 : 0;
            const std::size_t r1 = kh == 2 ? h - 1 : h;
            const std::size_t c0 = kw == 0 ? 1 : 0;
            const std::size_t c1 = kw == 2 ? w - 1 : w;
            for (std::size_t r = r0; r < r1; ++r) {
              const S* xrow = xp + (r + kh - 1) * w + (kw - 1);
              S* yrow = yp + r * w;
              for (std::size_t cc = c0; cc < c1; ++cc) yrow[cc] += kv * xrow[cc];
            }
          }
        }
      }
    }
  }
}

template <class S>
void conv_backward(const std::vector<S>& x, std::size_t batch, std::size_t cin, std::size_t h,
                   std::size_t w, std::size_t cout, const BasicTensor<S>& k, const std::vector<S>& dy,
                   BasicTensor<S>& dk, BasicTensor<S>& db, std::vector<S>* dx) {
  const std::size_t hw = h * w;
  if (dx) dx->assign(batch * cin * hw, S{});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const S* dyp = dy.data() + (n * cout + o) * hw;
      for (std::size_t p = 0; p < hw; ++p) db[o] += dyp[p];
      for (std::size_t c = 0; c < cin; ++c) {
        const S* xp = x.data() + (n * cin + c) * hw;
        S* dxp = dx ? dx->data() + (n * cin + c) * hw : nullptr;
        const S* kp = k.data() + (o * cin + c) * 9;
        S* dkp = dk.data() + (o * cin + c) * 9;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const std::size_t r0 = kh == 0 ? 1 : 0;
            const std::size_t r1 = kh == 2 ? h - 1 : h;
            const std::size_t c0 = kw == 0 ? 1 : 0;
            const std::size_t c1 = kw == 2 ? w - 1 : w;
            const S kv = kp[kh * 3 + kw];
            S acc{};
            for (std::size_t r = r0; r < r1; ++r) {
              const std::size_t off = (r + kh - 1) * w + (kw - 1);
              const S* dyrow = dyp + r * w;
              for (std::size_t cc = c0; cc < c1; ++cc) {
                acc += dyrow[cc] * xp[off + cc];
                if (dxp) dxp[off + cc] += dyrow[cc] * kv;
              }
            }
            dkp[kh * 3 + kw] += acc;
          }
        }
      }
    }
  }
}

// Batch statistics per feature; element (n, f, p) lives at (n*F + f)*P + p
// where P is the spatial size (1 for dense layers).
template <class S>
void bn_forward(std::vector<S>& z, std::size_t batch, std::size_t features, std::size_t spatial,
                const BasicTensor<S>& gamma, const BasicTensor<S>& beta, LayerCache<S>& cache) {
  const double m = static_cast<double>(batch * spatial);
  cache.xhat.assign(z.size(), S{});
  cache.inv_std.assign(features, S{});
  for (std::size_t f = 0; f < features; ++f) {
    S mean{};
    for (std::size_t n = 0; n < batch; ++n) {
      const S* p = z.data() + (n * features + f) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) mean += p[s];
    }
    mean /= S(m);
    S var{};
    for (std::size_t n = 0; n < batch; ++n) {
      const S* p = z.data() + (n * features + f) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const S d = p[s] - mean;
        var += d * d;
      }
    }
    var /= S(m);
    using std::sqrt;
    const S inv = S(1.0) / sqrt(var + S(kBatchNormEps));
    cache.inv_std[f] = inv;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * features + f) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const S xh = (z[base + s] - mean) * inv;
        cache.xhat[base + s] = xh;
        z[base + s] = gamma[f] * xh + beta[f];
      }
    }
  }
}

template <class S>
void bn_backward(std::vector<S>& dz, std::size_t batch, std::size_t features, std::size_t spatial,
                 const BasicTensor<S>& gamma, const LayerCache<S>& cache, BasicTensor<S>& dgamma,
                 BasicTensor<S>& dbeta) {
  const double m = static_cast<double>(batch * spatial);
  for (std::size_t f = 0; f < features; ++f) {
    S sum_dy{}, sum_dy_xhat{};
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * features + f) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        sum_dy += dz[base + s];
        sum_dy_xhat += dz[base + s] * cache.xhat[base + s];
      }
    }
    dgamma[f] += sum_dy_xhat;
    dbeta[f] += sum_dy;
    const S g = gamma[f];
    const S scale_factor = g * cache.inv_std[f] / S(m);
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * features + f) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const S xh = cache.xhat[base + s];
        dz[base + s] = scale_factor * (S(m) * dz[base + s] - sum_dy - xh * sum_dy_xhat);
      }
    }
  }
}

template <class S>
void pool_forward(const std::vector<S>& x, std::size_t planes, std::size_t h, std::size_t w,
                  std::vector<S>& y, std::vector<std::size_t>& argmax) {
  const std::size_t oh = h / 2, ow = w / 2;
  y.assign(planes * oh * ow, S{});
  argmax.assign(y.size(), 0);
  for (std::size_t p = 0; p < planes; ++p) {
    const S* xp = x.data() + p * h * w;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        std::size_t best = (2 * r) * w + 2 * c;
        for (std::size_t dr = 0; dr < 2; ++dr) {
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = (2 * r + dr) * w + 2 * c + dc;
            if (value_of(xp[idx]) > value_of(xp[best])) best = idx;
          }
        }
        const std::size_t o = (p * oh + r) * ow + c;
        y[o] = xp[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
}

template <class S>
BasicTensor<S> run_forward(const Architecture& arch, const Params<S>& params, const BasicTensor<S>& batch,
                           TapeT<S>* tape) {
  const Shape& in_shape = arch.input_shape;
  if (batch.rank() != in_shape.size() + 1 || !std::equal(in_shape.begin(), in_shape.end(), batch.shape().begin() + 1)) {
    throw DimensionError("batch shape " + shape_string(batch.shape()) + " does not match network input " +
                         shape_string(in_shape));
  }
  const auto geo = layer_geometry(arch);
  const std::size_t n = batch.dim(0);
  std::vector<S> x;
  if (arch.layers.front().kind == LayerKind::conv) {
    // [B, H, W, C] -> [B, C, H, W]
    const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
    x.resize(batch.size());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
          for (std::size_t ch = 0; ch < c; ++ch)
            x[((b * c + ch) * h + r) * w + col] = batch[((b * h + r) * w + col) * c + ch];
  } else {
    x = batch.storage();
  }
  if (tape) {
    tape->layers.assign(arch.layers.size(), {});
    tape->batch = n;
  }

  std::size_t slot = 0;
  std::vector<S> z;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& layer = arch.layers[l];
    const LayerGeometry& g = geo[l];
    LayerCache<S> scratch;
    LayerCache<S>& cache = tape ? tape->layers[l] : scratch;
    const BasicTensor<S>& weight = params[slot++];
    const BasicTensor<S>& bias = params[slot++];
    std::size_t spatial = 1;
    if (layer.kind == LayerKind::conv) {
      conv_forward(x, n, g.channels, g.height, g.width, layer.units, weight, bias, z);
      spatial = g.height * g.width;
    } else {
      dense_forward(x, n, g.in_features, layer.units, weight, bias, z);
    }
    if (tape) cache.input = std::move(x);
    if (layer.batch_norm) {
      const BasicTensor<S>& gamma = params[slot++];
      const BasicTensor<S>& beta = params[slot++];
      bn_forward(z, n, layer.units, spatial, gamma, beta, cache);
    }
    if (layer.activation == Activation::relu) {
      if (tape) cache.pre_activation = z;
      for (S& v : z) {
        if (!(value_of(v) > 0.0)) v = S{};
      }
    }
    if (layer.pool == Pool::max2x2) {
      std::vector<S> pooled;
      pool_forward(z, n * layer.units, g.height, g.width, pooled, cache.pool_argmax);
      z = std::move(pooled);
    }
    x = std::move(z);
    z = {};
  }
  check_finite(x, "forward pass");
  const std::size_t out_dim = x.size() / n;
  return BasicTensor<S>({n, out_dim}, std::move(x));
}

template <class S>
Params<S> run_backward(const Architecture& arch, const Params<S>& params, const TapeT<S>& tape,
                       const BasicTensor<S>& d_output, BasicTensor<S>* d_input) {
  const auto geo = layer_geometry(arch);
  const std::size_t n = tape.batch;
  Params<S> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.shape());

  // Parameter slot of each layer's weight.
  std::vector<std::size_t> first_slot(arch.layers.size());
  {
    std::size_t slot = 0;
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
      first_slot[l] = slot;
      slot += arch.layers[l].batch_norm ? 4 : 2;
    }
  }

  std::vector<S> dy = d_output.storage();
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const LayerSpec& layer = arch.layers[li];
    const LayerGeometry& g = geo[li];
    const LayerCache<S>& cache = tape.layers[li];
    const std::size_t slot = first_slot[li];
    std::size_t spatial = 1;
    if (layer.kind == LayerKind::conv) spatial = g.height * g.width;

    if (layer.pool == Pool::max2x2) {
      std::vector<S> unpooled(n * layer.units * spatial, S{});
      for (std::size_t i = 0; i < dy.size(); ++i) unpooled[cache.pool_argmax[i]] += dy[i];
      dy = std::move(unpooled);
    }
    if (layer.activation == Activation::relu) {
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (!(value_of(cache.pre_activation[i]) > 0.0)) dy[i] = S{};
      }
    }
    if (layer.batch_norm) {
      bn_backward(dy, n, layer.units, spatial, params[slot + 2], cache, grads[slot + 2], grads[slot + 3]);
    }
    const bool need_dx = li > 0 || d_input != nullptr;
    std::vector<S> dx;
    if (layer.kind == LayerKind::conv) {
      conv_backward(cache.input, n, g.channels, g.height, g.width, layer.units, params[slot], dy,
                    grads[slot], grads[slot + 1], need_dx ? &dx : nullptr);
    } else {
      dense_backward(cache.input, n, g.in_features, layer.units, params[slot], dy, grads[slot],
                     grads[slot + 1], need_dx ? &dx : nullptr);
    }
    dy = std::move(dx);
  }

  if (d_input) {
    const Shape& in_shape = arch.input_shape;
    Shape full{n};
    full.insert(full.end(), in_shape.begin(), in_shape.end());
    if (arch.layers.front().kind == LayerKind::conv) {
      const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
      std::vector<S> nhwc(dy.size());
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t col = 0; col < w; ++col)
            for (std::size_t ch = 0; ch < c; ++ch)
              nhwc[((b * h + r) * w + col) * c + ch] = dy[((b * c + ch) * h + r) * w + col];
      *d_input = BasicTensor<S>(full, std::move(nhwc));
    } else {
      *d_input = BasicTensor<S>(full, std::move(dy));
    }
  }
  return grads;
}

template <class S>
S loss_and_dout(LossKind kind, const BasicTensor<S>& out, const Targets& targets, BasicTensor<S>& d_out) {
  const std::size_t n = out.dim(0);
  const std::size_t k = out.dim(1);
  d_out = BasicTensor<S>(out.shape());
  S total{};
  if (kind == LossKind::softmax_cross_entropy) {
    if (targets.labels.size() != n) throw DimensionError("label count does not match batch size");
    using std::exp;
    using std::log;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t y = targets.labels[i];
      if (y >= k) throw DimensionError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " outputs");
      const S* row = out.data() + i * k;
      S mx = row[0];
      for (std::size_t j = 1; j < k; ++j) {
        if (value_of(row[j]) > value_of(mx)) mx = row[j];
      }
      S sum{};
      for (std::size_t j = 0; j < k; ++j) sum += exp(row[j] - mx);
      const S log_z = mx + log(sum);
      total += log_z - row[y];
      for (std::size_t j = 0; j < k; ++j) {
        S p = exp(row[j] - log_z);
        if (j == y) p -= S(1.0);
        d_out[i * k + j] = p / S(static_cast<double>(n));
      }
    }
    total /= S(static_cast<double>(n));
  } else {
    if (targets.values.shape() != out.shape()) throw DimensionError("regression targets do not match output shape");
    const double m = static_cast<double>(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const S diff = out[i] - S(targets.values[i]);
      total += diff * diff;
      d_out[i] = S(2.0) * diff / S(m);
    }
    total /= S(m);
  }
  if (!std::isfinite(value_of(total))) throw NumericsError("non-finite loss");
  return total;
}

}  // namespace

Tensor forward(const NetworkParams& net, const Tensor& batch) {
  return run_forward<double>(net.arch, net.tensors, batch, nullptr);
}

OutputLoss output_loss(LossKind loss, const Tensor& output, const Targets& targets) {
  OutputLoss result;
  result.loss = loss_and_dout<double>(loss, output, targets, result.d_output);
  return result;
}

double loss_value(const NetworkParams& net, LossKind loss, const Tensor& batch, const Targets& targets) {
  const Tensor out = forward(net, batch);
  Tensor unused;
  return loss_and_dout<double>(loss, out, targets, unused);
}

LossAndGrad grad(const NetworkParams& net, LossKind loss, const Tensor& batch, const Targets& targets) {
  TapeT<double> tape;
  const Tensor out = run_forward<double>(net.arch, net.tensors, batch, &tape);
  Tensor d_out;
  LossAndGrad result;
  result.loss = loss_and_dout<double>(loss, out, targets, d_out);
  result.grads = run_backward<double>(net.arch, net.tensors, tape, d_out, nullptr);
  for (const Tensor& g : result.grads) check_finite(g.storage(), "gradient");
  return result;
}

HessianVectorProduct hessian_vector_product(const NetworkParams& net, LossKind loss, const Tensor& batch,
                                            const Targets& targets, const GradientSet& direction) {
  if (direction.size() != net.tensors.size()) throw DimensionError("direction does not match parameters");
  Params<Dual> lifted;
  lifted.reserve(net.tensors.size());
  for (std::size_t t = 0; t < net.tensors.size(); ++t) {
    const Tensor& p = net.tensors[t];
    if (direction[t].shape() != p.shape()) throw DimensionError("direction tensor shape mismatch");
    std::vector<Dual> data(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) data[i] = Dual(p[i], direction[t][i]);
    lifted.emplace_back(p.shape(), std::move(data));
  }
  std::vector<Dual> xin(batch.storage().begin(), batch.storage().end());
  const BasicTensor<Dual> dual_batch(batch.shape(), std::move(xin));

  TapeT<Dual> tape;
  const BasicTensor<Dual> out = run_forward<Dual>(net.arch, lifted, dual_batch, &tape);
  BasicTensor<Dual> d_out;
  const Dual l = loss_and_dout<Dual>(loss, out, targets, d_out);
  const Params<Dual> g = run_backward<Dual>(net.arch, lifted, tape, d_out, nullptr);

  HessianVectorProduct result;
  result.loss = l.v;
  for (const auto& t : g) {
    std::vector<double> gv(t.size()), hv(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      gv[i] = t[i].v;
      hv[i] = t[i].d;
    }
    check_finite(gv, "gradient");
    check_finite(hv, "Hessian-vector product");
    result.grads.emplace_back(t.shape(), std::move(gv));
    result.hv.emplace_back(t.shape(), std::move(hv));
  }
  return result;
}

ForwardTrace forward_trace(const NetworkParams& net, const Tensor& batch) {
  auto tape = std::make_shared<detail::Tape>();
  ForwardTrace trace;
  trace.output = run_forward<double>(net.arch, net.tensors, batch, tape.get());
  trace.tape = std::move(tape);
  return trace;
}

BackwardResult backward(const NetworkParams& net, const ForwardTrace& trace, const Tensor& d_output) {
  if (d_output.shape() != trace.output.shape()) throw DimensionError("output gradient shape mismatch");
  BackwardResult result;
  result.grads = run_backward<double>(net.arch, net.tensors, *trace.tape, d_output, &result.input_grad);
  return result;
}

GradientSet zeros_like(const std::vector<Tensor>& tensors) {
  GradientSet out;
  out.reserve(tensors.size());
  for (const Tensor& t : tensors) out.emplace_back(t.shape());
  return out;
}

void axpy(double a, const GradientSet& x, GradientSet& y) {
  if (x.size() != y.size()) throw DimensionError("axpy: tensor count mismatch");
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (x[t].shape() != y[t].shape()) throw DimensionError("axpy: tensor shape mismatch");
    for (std::size_t i = 0; i < x[t].size(); ++i) y[t][i] += a * x[t][i];
  }
}

void scale(GradientSet& x, double a) {
  for (Tensor& t : x)
    for (double& v : t.storage()) v *= a;
}

double dot(const GradientSet& a, const GradientSet& b) {
  double s = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].size(); ++i) s += a[t][i] * b[t][i];
  return s;
}

std::vector<double> flatten(const std::vector<Tensor>& tensors) {
  std::vector<double> flat;
  for (const Tensor& t : tensors) flat.insert(flat.end(), t.storage().begin(), t.storage().end());
  return flat;
}

void unflatten(std::span<const double> flat, std::vector<Tensor>& tensors) {
  std::size_t k = 0;
  for (Tensor& t : tensors) {
    if (k + t.size() > flat.size()) throw DimensionError("unflatten: not enough values");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k), flat.begin() + static_cast<std::ptrdiff_t>(k + t.size()),
              t.storage().begin());
    k += t.size();
  }
  if (k != flat.size()) throw DimensionError("unflatten: too many values");
}

std::uint64_t params_hash(const NetworkParams& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::string arch = net.arch.to_string();
  mix(arch.data(), arch.size());
  for (const Tensor& t : net.tensors) mix(t.data(), t.size() * sizeof(double));
  return h;
}

}  // namespace lasium::numkit

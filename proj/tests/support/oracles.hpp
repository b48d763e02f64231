#pragma once

// Test-only oracles. Everything here is computed from forward evaluations or
// closed forms, never from the library's backward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lasium/network.hpp"

namespace lasium::testing {

/// |a-b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
/// derivative is ~0 from turning roundoff into huge relative errors.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central differences of a scalar function over all parameters.
inline std::vector<double> central_differences(numkit::NetworkParams net,
                                               const std::function<double(const numkit::NetworkParams&)>& f,
                                               double h = 1e-5) {
  std::vector<double> out;
  for (std::size_t t = 0; t < net.tensors.size(); ++t) {
    for (std::size_t i = 0; i < net.tensors[t].size(); ++i) {
      const double saved = net.tensors[t][i];
      net.tensors[t][i] = saved + h;
      const double up = f(net);
      net.tensors[t][i] = saved - h;
      const double down = f(net);
      net.tensors[t][i] = saved;
      out.push_back((up - down) / (2.0 * h));
    }
  }
  return out;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

/// Reference MLP forward: plain loops, no shared code with numkit kernels.
/// Layers are (W [out x in] row-major, b, relu?) triples.
struct RefLayer {
  std::vector<double> w;
  std::vector<double> b;
  std::size_t in = 0, out = 0;
  bool relu = false;
};

inline std::vector<double> reference_mlp(const std::vector<RefLayer>& layers, std::vector<double> x) {
  for (const RefLayer& l : layers) {
    std::vector<double> y(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double s = l.b[o];
      for (std::size_t i = 0; i < l.in; ++i) s += l.w[o * l.in + i] * x[i];
      y[o] = l.relu ? std::max(0.0, s) : s;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace lasium::testing

// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle. Independent of Graph::backward: it only
// ever evaluates forward values.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "seqfuse/diffcore.hpp"

namespace seqfuse::testing {

/// ||a - b|| / max(||a||, ||b||), or 0 when both norms are below `floor`.
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  if (scale < floor) return 0.0;
  return std::sqrt(diff) / scale;
}

/// dF/dx for every entry of x, by (F(x + h) - F(x - h)) / 2h.
inline Tensor numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x, double step = 1e-5) {
  Tensor g = x.zeros_like();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = cols == 0 ? Tensor::vector(rows) : Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = n(rng);
  return t;
}

}  // namespace seqfuse::testing

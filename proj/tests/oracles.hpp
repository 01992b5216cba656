// Copyright 2026 The tsfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Independent reference computations shared by the test suites: central
// finite differences and brute-force reductions written without the library
// kernels.

#pragma once

#include <algorithm>
#include <cstring>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tsfed/tensor.hpp"

namespace tsfed::testing {

// d f / d x by central differences, one coordinate at a time.
inline Tensor CentralDiff(const std::function<double(const Tensor&)>& f,
                          const Tensor& x, double h) {
  Tensor g(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest |a - b| / max(|b|, floor) over all elements.
inline double MaxRelError(const Tensor& a, const Tensor& b, double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor);
    worst = std::max(worst, d);
  }
  return worst;
}

inline Tensor RandomTensor(Tensor::Shape shape, std::mt19937_64& rng,
                           double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.vec()) v = u(rng);
  return t;
}

// Plain triple-loop product.
inline std::vector<double> NaiveMatmul(const std::vector<double>& a,
                                       const std::vector<double>& b,
                                       std::size_t n, std::size_t k,
                                       std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * m + j];
      c[i * m + j] = s;
    }
  }
  return c;
}

// Same shape and identical bit patterns (so -0.0 differs from 0.0).
inline bool BitwiseEqual(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.vec().data(), b.vec().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace tsfed::testing

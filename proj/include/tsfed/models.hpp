// Copyright 2026 The tsfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Forecasting models over flat parameter vectors: DLinear (moving-average
// trend/seasonal decomposition followed by one linear map per component) and
// a plain ReLU MLP. Everything downstream only sees ParamVector, so the
// federated and condensation code is model-agnostic.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tsfed/autodiff.hpp"
#include "tsfed/error.hpp"
#include "tsfed/param_vector.hpp"
#include "tsfed/rng.hpp"
#include "tsfed/tensor.hpp"

namespace tsfed {

enum class ModelKind { kDLinear, kMlp };

inline const char* ModelKindName(ModelKind k) {
  return k == ModelKind::kDLinear ? "dlinear" : "mlp";
}

inline ModelKind ParseModelKind(const std::string& s) {
  if (s == "dlinear") return ModelKind::kDLinear;
  if (s == "mlp") return ModelKind::kMlp;
  throw ConfigError("model.kind: expected 'dlinear' or 'mlp', got '" + s + "'");
}

// Largest odd kernel that fits a window of `input_len` points, capped at
// `requested`.
inline std::size_t ClampKernel(std::size_t requested, std::size_t input_len) {
  std::size_t k = std::min(requested, 2 * input_len - 1);
  if (k % 2 == 0) --k;
  return std::max<std::size_t>(k, 1);
}

struct ModelSpec {
  ModelKind kind = ModelKind::kDLinear;
  std::size_t input_len = 24;
  std::size_t output_len = 24;
  std::size_t kernel = 25;                // dlinear only
  std::vector<std::size_t> hidden{64};    // mlp only

  static ModelSpec DLinear(std::size_t input_len, std::size_t output_len,
                           std::size_t kernel = 25) {
    ModelSpec s;
    s.kind = ModelKind::kDLinear;
    s.input_len = input_len;
    s.output_len = output_len;
    s.kernel = ClampKernel(kernel, input_len);
    return s;
  }

  static ModelSpec Mlp(std::size_t input_len, std::size_t output_len,
                       std::vector<std::size_t> hidden = {64}) {
    ModelSpec s;
    s.kind = ModelKind::kMlp;
    s.input_len = input_len;
    s.output_len = output_len;
    s.hidden = std::move(hidden);
    return s;
  }

  void Validate() const {
    if (input_len < 1 || output_len < 1) {
      throw ConfigError("model: input and output lengths must be >= 1");
    }
    if (kind == ModelKind::kDLinear) {
      if (kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("model.kernel must be odd and >= 1, got " +
                          std::to_string(kernel));
      }
      if (kernel > 2 * input_len - 1) {
        throw ConfigError("model.kernel " + std::to_string(kernel) +
                          " exceeds 2*input_len-1 = " +
                          std::to_string(2 * input_len - 1));
      }
    } else {
      if (hidden.empty()) throw ConfigError("model.hidden must not be empty");
      for (std::size_t h : hidden) {
        if (h < 1) throw ConfigError("model.hidden sizes must be >= 1");
      }
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Weights are stored (fan_in, fan_out) so a dense layer is x*W + b.
inline ParamLayout Layout(const ModelSpec& spec) {
  ParamLayout layout;
  std::size_t off = 0;
  auto push = [&](std::string name, Tensor::Shape shape) {
    ParamView v{std::move(name), std::move(shape), off};
    off += v.size();
    layout.push_back(std::move(v));
  };
  const std::size_t lx = spec.input_len, ly = spec.output_len;
  if (spec.kind == ModelKind::kDLinear) {
    push("trend.weight", {lx, ly});
    push("trend.bias", {ly});
    push("seasonal.weight", {lx, ly});
    push("seasonal.bias", {ly});
  } else {
    std::size_t in = lx;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const std::string p = "dense" + std::to_string(i);
      push(p + ".weight", {in, spec.hidden[i]});
      push(p + ".bias", {spec.hidden[i]});
      in = spec.hidden[i];
    }
    push("head.weight", {in, ly});
    push("head.bias", {ly});
  }
  return layout;
}

inline std::size_t ParamCount(const ModelSpec& spec) {
  return LayoutSize(Layout(spec));
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
inline ParamVector InitParams(const ModelSpec& spec, std::uint64_t seed) {
  spec.Validate();
  ParamVector p = ParamVector::Zeros(Layout(spec));
  Rng rng = MakeRng(seed, "init_params");
  for (const auto& v : p.layout()) {
    if (v.shape.size() != 2) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(v.shape[0]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < v.size(); ++i) p[v.offset + i] = u(rng);
  }
  return p;
}

// (L, L) matrix A with trend = A * series: a centred moving average of width
// `kernel` over the series padded by repeating its edge values.
inline Tensor MovingAverageMatrix(std::size_t len, std::size_t kernel) {
  if (kernel % 2 == 0) {
    throw ConfigError("moving average kernel must be odd, got " +
                      std::to_string(kernel));
  }
  if (kernel > 2 * len - 1) {
    throw ConfigError("moving average kernel " + std::to_string(kernel) +
                      " exceeds 2*L-1 for L=" + std::to_string(len));
  }
  Tensor a({len, len});
  const auto half = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  const auto last = static_cast<std::ptrdiff_t>(len) - 1;
  const double w = 1.0 / static_cast<double>(kernel);
  for (std::ptrdiff_t j = 0; j <= last; ++j) {
    for (std::ptrdiff_t o = -half; o <= half; ++o) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(j + o, 0, last);
      a.at(static_cast<std::size_t>(j), static_cast<std::size_t>(src)) += w;
    }
  }
  return a;
}

struct Decomposition {
  Tensor trend;
  Tensor seasonal;
};

// Splits each row of x (batch, L) into trend and seasonal = x - trend.
// trend + seasonal reproduces x up to one rounding of the subtraction.
inline Decomposition Decompose(const Tensor& x, std::size_t kernel) {
  if (x.rank() != 2) {
    throw ShapeError("decompose expects (batch, L), got " +
                     ShapeToString(x.shape()));
  }
  const Tensor at = transpose(MovingAverageMatrix(x.cols(), kernel));
  Tensor trend = matmul(x, at);
  Tensor seasonal = sub(x, trend);
  return {std::move(trend), std::move(seasonal)};
}

namespace detail {

inline void CheckInput(const ModelSpec& spec, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != spec.input_len) {
    throw ShapeError("model input must be (batch, " +
                     std::to_string(spec.input_len) + "), got " +
                     ShapeToString(x.shape()));
  }
}

inline ad::Var Dense(ad::Var params, ad::Var x, const ParamView& w,
                     const ParamView& b) {
  ad::Var wv = ad::slice(params, w.offset, w.shape);
  ad::Var bv = ad::slice(params, b.offset, {1, b.size()});
  return ad::add_row(ad::matmul(x, wv), bv);
}

}  // namespace detail

// Differentiable forward pass: x (batch, L_x) -> (batch, L_y).
inline ad::Var Forward(const ModelSpec& spec, ad::Var params, ad::Var x) {
  detail::CheckInput(spec, x.value());
  const ParamLayout layout = Layout(spec);
  if (params.value().size() != LayoutSize(layout)) {
    throw ShapeError("model expects " + std::to_string(LayoutSize(layout)) +
                     " parameters, got " +
                     std::to_string(params.value().size()));
  }
  ad::Tape& tape = *params.tape();
  if (spec.kind == ModelKind::kDLinear) {
    ad::Var at = tape.Constant(
        transpose(MovingAverageMatrix(spec.input_len, spec.kernel)));
    ad::Var trend = ad::matmul(x, at);
    ad::Var seasonal = ad::sub(x, trend);
    return ad::add(detail::Dense(params, trend, layout[0], layout[1]),
                   detail::Dense(params, seasonal, layout[2], layout[3]));
  }
  ad::Var h = x;
  const std::size_t layers = layout.size() / 2;
  for (std::size_t i = 0; i < layers; ++i) {
    h = detail::Dense(params, h, layout[2 * i], layout[2 * i + 1]);
    if (i + 1 < layers) h = ad::relu(h);
  }
  return h;
}

// Mean squared error over every element of the batch.
inline ad::Var Loss(const ModelSpec& spec, ad::Var params, ad::Var x,
                    ad::Var y) {
  if (y.value().rank() != 2 || y.value().cols() != spec.output_len ||
      y.value().rows() != x.value().rows()) {
    throw ShapeError("target must be (" + std::to_string(x.value().rows()) +
                     ", " + std::to_string(spec.output_len) + "), got " +
                     ShapeToString(y.value().shape()));
  }
  return ad::mean(ad::square(ad::sub(Forward(spec, params, x), y)));
}

// (X, Y) rows: x is (batch, L_x), y is (batch, L_y). Tensors have no empty
// shape, so a Batch always holds at least one pair.
struct Batch {
  Tensor x;
  Tensor y;
};

inline Tensor Predict(const ModelSpec& spec, const ParamVector& params,
                      const Tensor& x) {
  ad::Tape tape;
  return Forward(spec, tape.Constant(params.flat()), tape.Constant(x)).value();
}

inline double EvalLoss(const ModelSpec& spec, const ParamVector& params,
                       const Batch& batch) {
  ad::Tape tape;
  return Loss(spec, tape.Constant(params.flat()), tape.Constant(batch.x),
              tape.Constant(batch.y))
      .value()
      .item();
}

struct LossGrad {
  double loss = 0.0;
  Tensor grad;  // flat, same length as the parameter vector
};

inline LossGrad EvalLossGrad(const ModelSpec& spec, const ParamVector& params,
                             const Batch& batch) {
  ad::Tape tape;
  ad::Var w = tape.Leaf(params.flat());
  ad::Var l = Loss(spec, w, tape.Constant(batch.x), tape.Constant(batch.y));
  return {l.value().item(), ad::grad(l, {w})[0]};
}

}  // namespace tsfed

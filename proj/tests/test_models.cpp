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

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tsfed/data.hpp"
#include "tsfed/models.hpp"

namespace tsfed {
namespace {

using testing::CentralDiff;
using testing::MaxRelError;
using testing::RandomTensor;

// Centred moving average with edge replication, by direct enumeration of the
// padded window.
std::vector<double> PaddedMovingAverage(const std::vector<double>& x, std::size_t k) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::ptrdiff_t j = i - half; j <= i + half; ++j) {
      s += x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, n - 1))];
    }
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(k);
  }
  return out;
}

TEST(Models, InitIsDeterministicAndBounded) {
  const ModelSpec spec = ModelSpec::DLinear(24, 24);
  const ParamVector a = InitParams(spec, 42), b = InitParams(spec, 42);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, InitParams(spec, 43));
  for (const auto& v : a.layout()) {
    const Tensor t = a.Get(v.name);
    if (v.shape.size() == 1) {
      for (double x : t.vec()) EXPECT_EQ(x, 0.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(v.shape[0]));
      for (double x : t.vec()) EXPECT_LE(std::abs(x), bound);
    }
  }
}

TEST(Models, ParameterCounts) {
  EXPECT_EQ(ParamCount(ModelSpec::DLinear(24, 24)), 2u * (24 * 24 + 24));
  EXPECT_EQ(ParamCount(ModelSpec::Mlp(4, 2, {8})), (4u * 8 + 8) + (8u * 2 + 2));
}

TEST(Models, KernelValidation) {
  ModelSpec s = ModelSpec::DLinear(24, 24);
  EXPECT_EQ(s.kernel, 25u);
  EXPECT_EQ(ModelSpec::DLinear(4, 2).kernel, 7u);   // clamped to 2*4-1
  EXPECT_EQ(ModelSpec::DLinear(4, 2, 6).kernel, 5u);
  s.kernel = 4;
  EXPECT_THROW(s.Validate(), ConfigError);
  s.kernel = 49;
  EXPECT_THROW(s.Validate(), ConfigError);
  EXPECT_THROW(Decompose(Tensor({1, 5}, 1.0), 2), ConfigError);
}

TEST(Decompose, ConstantSeries) {
  for (std::size_t k : {1u, 3u, 5u, 9u}) {
    const auto d = Decompose(Tensor({2, 5}, 3.25), k);
    for (double v : d.trend.vec()) EXPECT_EQ(v, 3.25);
    for (double v : d.seasonal.vec()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Decompose, KernelOneIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = RandomTensor({3, 7}, rng);
  const auto d = Decompose(x, 1);
  EXPECT_EQ(d.trend, x);
  for (double v : d.seasonal.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Decompose, RampWithReplicatePadding) {
  const auto d = Decompose(Tensor::Matrix(1, 4, {0, 1, 2, 3}), 3);
  const double want[] = {1.0 / 3.0, 1.0, 2.0, 8.0 / 3.0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(d.trend[i], want[i], 1e-15);
}

TEST(Decompose, MatchesEnumeratedWindows) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t len = 1 + t % 30;
    const std::size_t k = ClampKernel(1 + 2 * (t % 13), len);
    const Tensor x = RandomTensor({1, len}, rng);
    const auto d = Decompose(x, k);
    const auto ref = PaddedMovingAverage(x.vec(), k);
    for (std::size_t i = 0; i < len; ++i) EXPECT_NEAR(d.trend[i], ref[i], 1e-14);
  }
}

// trend + (x - trend) can differ from x by one rounding: when x - trend falls
// halfway between representable values no seasonal value sums back exactly.
TEST(Decompose, ReconstructionWithinOneRounding) {
  std::mt19937_64 rng(3);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (int t = 0; t < 100; ++t) {
    const Tensor x = RandomTensor({4, 24}, rng, -100.0, 100.0);
    const auto d = Decompose(x, 25);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double err = std::abs(d.trend[i] + d.seasonal[i] - x[i]);
      EXPECT_LE(err, eps * std::max({std::abs(x[i]), std::abs(d.trend[i]),
                                     std::abs(d.seasonal[i])}));
    }
  }
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
  std::mt19937_64 rng(4);
  for (const ModelSpec& spec : {ModelSpec::DLinear(6, 3), ModelSpec::Mlp(6, 3, {5, 4})}) {
    const Tensor y = Predict(spec, ParamVector::Zeros(Layout(spec)), RandomTensor({2, 6}, rng));
    for (double v : y.vec()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Forward, IdentityDLinearReturnsInput) {
  const ModelSpec spec = ModelSpec::DLinear(5, 5, 3);
  ParamVector p = ParamVector::Zeros(Layout(spec));
  Tensor eye({5, 5}, 0.0);
  for (std::size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0;
  p.Set("trend.weight", eye);
  p.Set("seasonal.weight", eye);
  std::mt19937_64 rng(5);
  const Tensor x = RandomTensor({3, 5}, rng);
  const Tensor y = Predict(spec, p, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(Forward, DLinearMatchesHandComputation) {
  std::mt19937_64 rng(6);
  const ModelSpec spec = ModelSpec::DLinear(6, 4, 3);
  for (int t = 0; t < 10; ++t) {
    const ParamVector p = InitParams(spec, static_cast<std::uint64_t>(t));
    ParamVector pb = p;
    pb.Set("trend.bias", RandomTensor({4}, rng));
    pb.Set("seasonal.bias", RandomTensor({4}, rng));
    const Tensor x = RandomTensor({1, 6}, rng);
    const auto trend = PaddedMovingAverage(x.vec(), 3);
    std::vector<double> seas(6);
    for (std::size_t i = 0; i < 6; ++i) seas[i] = x[i] - trend[i];
    const Tensor wt = pb.Get("trend.weight"), ws = pb.Get("seasonal.weight");
    const Tensor bt = pb.Get("trend.bias"), bs = pb.Get("seasonal.bias");
    const Tensor y = Predict(spec, pb, x);
    for (std::size_t j = 0; j < 4; ++j) {
      double want = bt[j] + bs[j];
      for (std::size_t i = 0; i < 6; ++i) want += trend[i] * wt.at(i, j) + seas[i] * ws.at(i, j);
      EXPECT_NEAR(y[j], want, 1e-14);
    }
  }
}

TEST(Forward, MlpMatchesHandComputation) {
  std::mt19937_64 rng(7);
  const ModelSpec spec = ModelSpec::Mlp(4, 2, {3});
  ParamVector p = InitParams(spec, 9);
  p.Set("dense0.bias", RandomTensor({3}, rng));
  p.Set("head.bias", RandomTensor({2}, rng));
  const Tensor x = RandomTensor({1, 4}, rng);
  const Tensor w0 = p.Get("dense0.weight"), b0 = p.Get("dense0.bias");
  const Tensor w1 = p.Get("head.weight"), b1 = p.Get("head.bias");
  double h[3];
  for (std::size_t j = 0; j < 3; ++j) {
    double s = b0[j];
    for (std::size_t i = 0; i < 4; ++i) s += x[i] * w0.at(i, j);
    h[j] = std::max(0.0, s);
  }
  const Tensor y = Predict(spec, p, x);
  for (std::size_t k = 0; k < 2; ++k) {
    double s = b1[k];
    for (std::size_t j = 0; j < 3; ++j) s += h[j] * w1.at(j, k);
    EXPECT_NEAR(y[k], s, 1e-15);
  }
}

TEST(Forward, ShapeMismatch) {
  const ModelSpec spec = ModelSpec::DLinear(6, 3);
  const ParamVector p = InitParams(spec, 1);
  EXPECT_THROW(Predict(spec, p, Tensor({2, 5}, 0.0)), ShapeError);
  EXPECT_THROW(EvalLoss(spec, p, Batch{Tensor({2, 6}), Tensor({2, 4})}), ShapeError);
  EXPECT_THROW(Predict(ModelSpec::DLinear(7, 3), p, Tensor({2, 7})), ShapeError);
}

TEST(Forward, DLinearIsLinearInParameters) {
  std::mt19937_64 rng(8);
  const ModelSpec spec = ModelSpec::DLinear(8, 4, 5);
  const ParamVector base = ParamVector::Zeros(Layout(spec));
  for (int t = 0; t < 20; ++t) {
    const ParamVector p1 = base.WithFlat(RandomTensor({ParamCount(spec)}, rng));
    const ParamVector p2 = base.WithFlat(RandomTensor({ParamCount(spec)}, rng));
    const double a = std::uniform_real_distribution<double>(-3, 3)(rng);
    const double b = std::uniform_real_distribution<double>(-3, 3)(rng);
    const Tensor x = RandomTensor({5, 8}, rng);
    const Tensor mix = Predict(spec, base.WithFlat(add(scale(p1.flat(), a), scale(p2.flat(), b))), x);
    const Tensor y1 = Predict(spec, p1, x), y2 = Predict(spec, p2, x);
    for (std::size_t i = 0; i < mix.size(); ++i) EXPECT_NEAR(mix[i], a * y1[i] + b * y2[i], 1e-12);
  }
}

TEST(Loss, HandValues) {
  const ModelSpec spec = ModelSpec::DLinear(2, 2, 1);
  const ParamVector zero = ParamVector::Zeros(Layout(spec));
  // Zero model predicts 0, so residual = -y.
  EXPECT_EQ(EvalLoss(spec, zero, Batch{Tensor({2, 2}, 1.0), Tensor({2, 2}, 0.0)}), 0.0);
  EXPECT_NEAR(EvalLoss(spec, zero, Batch{Tensor({3, 2}, 1.0), Tensor({3, 2}, -0.7)}), 0.49, 1e-15);
  EXPECT_NEAR(EvalLoss(spec, zero, Batch{Tensor({2, 2}, 0.0),
                                         Tensor::Matrix(2, 2, {1, -1, 2, 0})}),
              1.5, 1e-15);
}

TEST(Loss, NonNegativeAndZeroOnlyAtTarget) {
  std::mt19937_64 rng(9);
  const ModelSpec spec = ModelSpec::Mlp(5, 3, {4});
  for (int t = 0; t < 20; ++t) {
    const ParamVector p = InitParams(spec, static_cast<std::uint64_t>(t));
    const Tensor x = RandomTensor({4, 5}, rng);
    const Tensor yhat = Predict(spec, p, x);
    EXPECT_EQ(EvalLoss(spec, p, Batch{x, yhat}), 0.0);
    Tensor y = yhat;
    y[static_cast<std::size_t>(t) % y.size()] += 1e-3;
    EXPECT_GT(EvalLoss(spec, p, Batch{x, y}), 0.0);
    EXPECT_GE(EvalLoss(spec, p, Batch{x, RandomTensor({4, 3}, rng)}), 0.0);
  }
}

TEST(Loss, EmptyBatchRejected) {
  WindowDataset ds(3, 2);
  EXPECT_THROW(ds.Gather(std::vector<std::size_t>{}), Error);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (const ModelSpec& spec : {ModelSpec::DLinear(6, 3, 3), ModelSpec::Mlp(5, 2, {4, 3})}) {
    for (int t = 0; t < 10; ++t) {
      ParamVector p = InitParams(spec, static_cast<std::uint64_t>(100 + t));
      p = p.WithFlat(add(p.flat(), RandomTensor({p.size()}, rng, -0.1, 0.1)));
      const Batch b{RandomTensor({4, spec.input_len}, rng), RandomTensor({4, spec.output_len}, rng)};
      const LossGrad lg = EvalLossGrad(spec, p, b);
      const Tensor fd = CentralDiff(
          [&](const Tensor& w) { return EvalLoss(spec, p.WithFlat(w), b); }, p.flat(), 1e-5);
      EXPECT_LT(MaxRelError(lg.grad, fd), 1e-4) << ModelKindName(spec.kind) << " case " << t;
    }
  }
}

}  // namespace
}  // namespace tsfed

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
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tsfed/flcore.hpp"

namespace tsfed {
namespace {

using testing::BitwiseEqual;
using testing::CentralDiff;

const ModelSpec kSpec = ModelSpec::DLinear(8, 4, 5);

ClientState MakeClient(const std::string& id, std::uint64_t seed,
                       std::size_t length = 80) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> s(length);
  for (std::size_t t = 0; t < length; ++t) s[t] = std::sin(0.3 * t) + 0.1 * n(rng);
  return ClientState{id, MakeWindows(s, kSpec.input_len, kSpec.output_len), seed};
}

double Distance(const ParamVector& a, const ParamVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

TEST(LocalTrain, ZeroLearningRateReturnsGlobalBitwise) {
  const ClientState c = MakeClient("a", 1);
  const ParamVector g = InitParams(kSpec, 3);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.batch = 7;
  cfg.local_epochs = 3;
  const LocalResult r = LocalTrain(kSpec, c, g, nullptr, cfg, 1);
  EXPECT_TRUE(BitwiseEqual(r.params.flat(), g.flat()));
  EXPECT_EQ(r.steps, 3 * ((c.train.size() + 6) / 7));
}

TEST(LocalTrain, FullBatchStepMatchesFiniteDifferenceGradient) {
  const ClientState c = MakeClient("a", 2);
  const ParamVector g = InitParams(kSpec, 4);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.momentum = 0.0;
  cfg.batch = c.train.size();
  const LocalResult r = LocalTrain(kSpec, c, g, nullptr, cfg, 1);
  ASSERT_EQ(r.steps, 1u);
  const Batch all = c.train.All();
  const Tensor fd = CentralDiff(
      [&](const Tensor& w) { return EvalLoss(kSpec, g.WithFlat(w), all); },
      g.flat(), 1e-6);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(r.params[i], g[i] - cfg.lr * fd[i], 1e-8) << i;
  }
  EXPECT_NEAR(r.mean_loss, EvalLoss(kSpec, g, all), 1e-12);
}

TEST(LocalTrain, MomentumAccumulatesVelocity) {
  const ClientState c = MakeClient("a", 5);
  const ParamVector g = InitParams(kSpec, 6);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.momentum = 0.5;
  cfg.batch = c.train.size();
  cfg.local_epochs = 2;
  const LocalResult r = LocalTrain(kSpec, c, g, nullptr, cfg, 1);
  const Batch all = c.train.All();
  const Tensor g0 = EvalLossGrad(kSpec, g, all).grad;
  Tensor w1 = g.flat();
  for (std::size_t i = 0; i < w1.size(); ++i) w1[i] -= cfg.lr * g0[i];
  const Tensor g1 = EvalLossGrad(kSpec, g.WithFlat(w1), all).grad;
  for (std::size_t i = 0; i < w1.size(); ++i) {
    EXPECT_NEAR(r.params[i], w1[i] - cfg.lr * (0.5 * g0[i] + g1[i]), 1e-10);
  }
}

TEST(LocalTrain, ProximalTermPullsTowardGlobal) {
  const ClientState c = MakeClient("a", 7);
  const ParamVector g = InitParams(kSpec, 8);
  double prev = INFINITY;
  for (double mu : {0.0, 1.0, 10.0, 100.0}) {
    TrainConfig cfg;
    cfg.lr = 0.005;
    cfg.batch = 8;
    cfg.fedprox_mu = mu;
    const double d = Distance(LocalTrain(kSpec, c, g, nullptr, cfg, 1).params, g);
    EXPECT_LT(d, prev) << "mu=" << mu;
    prev = d;
  }
}

TEST(LocalTrain, ReportsNonFiniteLossWithClientAndStep) {
  const ClientState c = MakeClient("bad_client", 9);
  ParamVector g = InitParams(kSpec, 1);
  g[0] = NAN;
  TrainConfig cfg;
  try {
    LocalTrain(kSpec, c, g, nullptr, cfg, 1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bad_client"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(LocalTrain, SyntheticPairsJoinTheTrainingSet) {
  const ClientState c = MakeClient("a", 10);
  const ParamVector g = InitParams(kSpec, 2);
  SyntheticDataset syn;
  syn.x = Tensor({3, kSpec.input_len}, 0.5);
  syn.y = Tensor({3, kSpec.output_len}, -0.5);
  TrainConfig cfg;
  cfg.batch = 1;
  cfg.lr = 0.0;
  EXPECT_EQ(LocalTrain(kSpec, c, g, &syn, cfg, 1).steps, c.train.size() + 3);
}

ParamVector Filled(double v) {
  ParamVector p = ParamVector::Zeros(Layout(kSpec));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = v + 0.001 * static_cast<double>(i);
  return p;
}

TEST(Aggregate, WorkedExamples) {
  const std::vector<ClientUpdate> equal{{Filled(1.0), 10}, {Filled(3.0), 10}};
  const ParamVector m = Aggregate(equal);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m[i], Filled(2.0)[i], 1e-12);
  const std::vector<ClientUpdate> skewed{{Filled(0.0), 30}, {Filled(4.0), 10}};
  const ParamVector s = Aggregate(skewed);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], Filled(1.0)[i], 1e-12);
  const std::vector<ClientUpdate> single{{Filled(7.0), 3}};
  EXPECT_TRUE(BitwiseEqual(Aggregate(single).flat(), Filled(7.0).flat()));
}

TEST(Aggregate, MatchesBruteForceWeightedSum) {
  Rng rng(11);
  std::uniform_int_distribution<std::size_t> size(1, 500);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(trial % 7);
    std::vector<ClientUpdate> ups;
    for (std::size_t j = 0; j < k; ++j) {
      ups.push_back({InitParams(kSpec, rng()), size(rng)});
    }
    const ParamVector m = Aggregate(ups);
    long double total = 0;
    for (const auto& u : ups) total += u.dataset_size;
    for (std::size_t i = 0; i < m.size(); ++i) {
      long double acc = 0;
      for (const auto& u : ups) acc += u.params[i] * (u.dataset_size / total);
      EXPECT_NEAR(m[i], static_cast<double>(acc), 1e-14);
    }
  }
}

TEST(Aggregate, RejectsEmptyAndZeroWeight) {
  EXPECT_THROW(Aggregate(std::vector<ClientUpdate>{}), Error);
  const std::vector<ClientUpdate> zero{{Filled(1.0), 0}};
  EXPECT_THROW(Aggregate(zero), Error);
}

ParamVector Big(std::size_t n) {
  return ParamVector({{"w", {n}, 0}}, Tensor({n}, 0.0));
}

TEST(Ldp, ZeroLambdaIsIdentity) {
  Rng rng(1);
  const ParamVector p = Filled(0.3);
  EXPECT_TRUE(BitwiseEqual(ApplyLdp(p, 0.0, rng).flat(), p.flat()));
  EXPECT_THROW(ApplyLdp(p, -1.0, rng), ConfigError);
}

void CheckMoments(NoiseKind kind) {
  const std::size_t n = 1000000;
  const double lambda = 0.01;
  Rng rng(42);
  const ParamVector noisy = ApplyLdp(Big(n), lambda, rng, kind);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += noisy[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (noisy[i] - mean) * (noisy[i] - mean);
  const double sd = std::sqrt(var / static_cast<double>(n - 1));
  EXPECT_NEAR(sd, lambda, 0.01 * lambda);
  EXPECT_LT(std::abs(mean), 5.0 * lambda / std::sqrt(static_cast<double>(n)));
}

TEST(Ldp, GaussianMoments) { CheckMoments(NoiseKind::kGaussian); }
TEST(Ldp, LaplaceMoments) { CheckMoments(NoiseKind::kLaplace); }

TEST(Ldp, LaplaceHasHeavierTailsThanGaussian) {
  // Excess kurtosis is 3 for Laplace and 0 for Gaussian.
  const std::size_t n = 400000;
  for (NoiseKind kind : {NoiseKind::kGaussian, NoiseKind::kLaplace}) {
    Rng rng(3);
    const ParamVector z = ApplyLdp(Big(n), 1.0, rng, kind);
    double m2 = 0, m4 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      m2 += z[i] * z[i];
      m4 += z[i] * z[i] * z[i] * z[i];
    }
    m2 /= n;
    m4 /= n;
    const double excess = m4 / (m2 * m2) - 3.0;
    EXPECT_NEAR(excess, kind == NoiseKind::kLaplace ? 3.0 : 0.0, 0.25);
  }
}

TEST(ParallelFor, RethrowsInIndexOrder) {
  for (std::size_t threads : {1u, 4u}) {
    try {
      ParallelFor(10, threads, [](std::size_t i) {
        if (i == 3 || i == 7) throw Error("index " + std::to_string(i));
      });
      FAIL();
    } catch (const Error& e) {
      EXPECT_STREQ(e.what(), "index 3");
    }
  }
}

struct Fixture {
  std::vector<ClientState> clients;
  std::vector<WindowDataset> tests;
};

Fixture MakeFixture(std::size_t n, bool identical) {
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    ClientState c = MakeClient("c" + std::to_string(i), identical ? 5 : 5 + i);
    c.seed = 100;  // same shuffle stream for identical clients
    f.clients.push_back(c);
    f.tests.push_back(MakeClient("t", 50 + i, 40).train);
  }
  return f;
}

TEST(RunRound, IdenticalClientsMatchASingleClient) {
  const ParamVector g = InitParams(kSpec, 1);
  RoundOptions opts;
  opts.train.batch = 8;
  opts.train.lr = 0.01;
  const Fixture one = MakeFixture(1, true);
  const Fixture many = MakeFixture(5, true);
  const RoundOutcome a = RunRound(kSpec, g, one.clients, nullptr, opts, 1, one.tests);
  const RoundOutcome b = RunRound(kSpec, g, many.clients, nullptr, opts, 1, one.tests);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(a.global[i], b.global[i], 1e-14);
  }
}

TEST(RunRound, DeterministicAcrossThreadCounts) {
  const Fixture f = MakeFixture(6, false);
  const ParamVector g = InitParams(kSpec, 2);
  RoundOptions opts;
  opts.train.batch = 8;
  opts.train.lr = 0.01;
  opts.train.ldp_lambda = 0.001;
  opts.seed = 9;
  const RoundOutcome base = RunRound(kSpec, g, f.clients, nullptr, opts, 3, f.tests);
  for (std::size_t threads : {1u, 3u, 6u}) {
    opts.threads = threads;
    const RoundOutcome r = RunRound(kSpec, g, f.clients, nullptr, opts, 3, f.tests);
    EXPECT_TRUE(BitwiseEqual(r.global.flat(), base.global.flat()));
    EXPECT_EQ(r.report.test_mse, base.report.test_mse);
  }
  opts.seed = 10;
  const RoundOutcome other = RunRound(kSpec, g, f.clients, nullptr, opts, 3, f.tests);
  EXPECT_FALSE(BitwiseEqual(other.global.flat(), base.global.flat()));
}

TEST(RunRound, CommunicationAccountingAndHook) {
  const Fixture f = MakeFixture(4, false);
  const ParamVector g = InitParams(kSpec, 3);
  RoundOptions opts;
  opts.participation = 0.5;
  opts.seed = 4;
  std::size_t seen_round = 0;
  const RoundOutcome r = RunRound(
      kSpec, g, f.clients, nullptr, opts, 7, f.tests,
      [&](ParamVector agg, const RoundOutcome& o) {
        seen_round = o.report.round;
        EXPECT_EQ(o.uploads.size(), 2u);
        return agg;
      });
  EXPECT_EQ(seen_round, 7u);
  EXPECT_EQ(r.participants.size(), 2u);
  const std::uint64_t model = ParamCount(kSpec) * sizeof(double);
  EXPECT_EQ(r.report.bytes_up, 2 * model);
  EXPECT_EQ(r.report.bytes_down, 2 * model);
  EXPECT_EQ(r.report.bytes_down_synthetic, 0u);
  EXPECT_EQ(r.report.round, 7u);
}

TEST(RunRound, TestMetricsMatchManualEvaluation) {
  const Fixture f = MakeFixture(3, false);
  const ParamVector g = InitParams(kSpec, 4);
  RoundOptions opts;
  const RoundOutcome r = RunRound(kSpec, g, f.clients, nullptr, opts, 1, f.tests);
  double se = 0, ae = 0;
  std::size_t n = 0;
  for (const auto& t : f.tests) {
    const Batch b = t.All();
    const Tensor pred = Predict(kSpec, r.global, b.x);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      se += (pred[i] - b.y[i]) * (pred[i] - b.y[i]);
      ae += std::abs(pred[i] - b.y[i]);
      ++n;
    }
  }
  EXPECT_NEAR(r.report.test_mse, se / n, 1e-12);
  EXPECT_NEAR(r.report.test_mae, ae / n, 1e-12);
}

TEST(SampleParticipants, FractionAndDeterminism) {
  EXPECT_EQ(SampleParticipants(8, 1.0, 1, 1).size(), 8u);
  EXPECT_EQ(SampleParticipants(8, 0.25, 1, 1).size(), 2u);
  EXPECT_EQ(SampleParticipants(8, 0.01, 1, 1).size(), 1u);
  EXPECT_EQ(SampleParticipants(8, 0.5, 1, 2), SampleParticipants(8, 0.5, 1, 2));
}

}  // namespace
}  // namespace tsfed

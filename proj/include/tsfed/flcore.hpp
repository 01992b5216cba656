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

// Federated round engine: client-side local training (optionally mixed with
// a server-provided synthetic dataset and a FedProx proximal term),
// size-weighted averaging, client-side LDP noise, and one full round with
// evaluation and communication accounting.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tsfed/autodiff.hpp"
#include "tsfed/data.hpp"
#include "tsfed/error.hpp"
#include "tsfed/models.hpp"
#include "tsfed/param_vector.hpp"
#include "tsfed/rng.hpp"
#include "tsfed/synthetic.hpp"

namespace tsfed {

enum class NoiseKind { kGaussian, kLaplace };

inline NoiseKind ParseNoiseKind(const std::string& s) {
  if (s == "gaussian") return NoiseKind::kGaussian;
  if (s == "laplace") return NoiseKind::kLaplace;
  throw ConfigError("ldp.distribution: expected 'gaussian' or 'laplace', got '" +
                    s + "'");
}

inline const char* NoiseKindName(NoiseKind k) {
  return k == NoiseKind::kGaussian ? "gaussian" : "laplace";
}

struct TrainConfig {
  double lr = 5e-4;
  double momentum = 0.9;
  std::size_t batch = 256;
  std::size_t local_epochs = 1;
  double fedprox_mu = 0.0;
  double ldp_lambda = 0.0;
  NoiseKind ldp_kind = NoiseKind::kGaussian;
  // Stop after this many optimizer steps; 0 means "run every epoch".
  std::size_t max_steps = 0;

  void Validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("train.momentum must lie in [0, 1)");
    }
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (local_epochs < 1) throw ConfigError("train.local_epochs must be >= 1");
    if (!(fedprox_mu >= 0.0)) throw ConfigError("train.fedprox_mu must be >= 0");
    if (!(ldp_lambda >= 0.0)) throw ConfigError("ldp.lambda must be >= 0");
  }
};

// A participant and its private training windows. local_train only ever sees
// the ClientState it is given.
struct ClientState {
  std::string id;
  WindowDataset train;
  std::uint64_t seed = 0;

  std::size_t dataset_size() const { return train.size(); }
};

struct LocalResult {
  ParamVector params;
  double mean_loss = 0.0;  // forecasting loss averaged over the batches
  std::size_t steps = 0;
};

// Trains a copy of `global` on the client's windows followed by the
// synthetic pairs (if any), reshuffled every epoch from the client's own
// stream, with SGD + momentum:
//
//   v <- momentum * v + g,   w <- w - lr * v
//
// The objective is the MSE forecasting loss plus (mu/2) * ||w - global||^2
// when fedprox_mu > 0.
inline LocalResult LocalTrain(const ModelSpec& spec, const ClientState& client,
                              const ParamVector& global,
                              const SyntheticDataset* synthetic,
                              const TrainConfig& cfg, std::size_t round) {
  if (global.size() != ParamCount(spec)) {
    throw ShapeError("client '" + client.id + "': global model has " +
                     std::to_string(global.size()) + " parameters, spec needs " +
                     std::to_string(ParamCount(spec)));
  }
  const WindowDataset* data = &client.train;
  WindowDataset mixed;
  if (synthetic != nullptr && synthetic->size() > 0) {
    mixed = client.train;
    mixed.AppendAll(synthetic->ToWindows());
    data = &mixed;
  }
  if (data->empty()) {
    throw Error("client '" + client.id + "' has no training windows");
  }

  LocalResult out;
  out.params = global;
  Tensor& w = out.params.flat();
  Tensor velocity(w.shape(), 0.0);
  bool have_velocity = false;

  std::vector<std::size_t> order(data->size());
  double loss_sum = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = MakeRng(client.seed, "shuffle", {round, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      if (cfg.max_steps > 0 && out.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const Batch batch = data->Gather(
          std::span<const std::size_t>(order).subspan(start, end - start));

      ad::Tape tape;
      ad::Var wv = tape.Leaf(w);
      ad::Var mse = Loss(spec, wv, tape.Constant(batch.x), tape.Constant(batch.y));
      ad::Var objective = mse;
      if (cfg.fedprox_mu > 0.0) {
        ad::Var diff = ad::sub(wv, tape.Constant(global.flat()));
        objective = ad::add(
            mse, ad::scale(ad::sum(ad::square(diff)), 0.5 * cfg.fedprox_mu));
      }
      const double lv = objective.value().item();
      if (!std::isfinite(lv)) {
        throw NumericError("client '" + client.id +
                           "': non-finite loss at step " +
                           std::to_string(out.steps));
      }
      const Tensor g = ad::grad(objective, {wv})[0];
      if (!have_velocity) {
        velocity = g;
        have_velocity = true;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) {
          velocity[i] = cfg.momentum * velocity[i] + g[i];
        }
      }
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * velocity[i];
      loss_sum += mse.value().item();
      ++out.steps;
    }
  }
  out.mean_loss = out.steps > 0 ? loss_sum / static_cast<double>(out.steps) : 0.0;
  return out;
}

struct ClientUpdate {
  ParamVector params;
  std::size_t dataset_size = 0;
};

// Size-weighted average: sum_i (n_i / sum_j n_j) * W_i.
inline ParamVector Aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw Error("aggregate: no client updates");
  double total = 0.0;
  for (const auto& u : updates) {
    RequireSameLayout(updates[0].params, u.params, "aggregate");
    total += static_cast<double>(u.dataset_size);
  }
  if (!(total > 0.0)) throw Error("aggregate: total dataset size is zero");
  ParamVector out = ParamVector::Zeros(updates[0].params.layout());
  Tensor& acc = out.flat();
  for (const auto& u : updates) {
    const double weight = static_cast<double>(u.dataset_size) / total;
    const Tensor& p = u.params.flat();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weight * p[i];
  }
  return out;
}

// Adds i.i.d. zero-mean noise with standard deviation `lambda` to every
// parameter. The Laplace variant uses scale lambda/sqrt(2) so both kinds
// have the same variance.
inline ParamVector ApplyLdp(const ParamVector& params, double lambda, Rng& rng,
                            NoiseKind kind = NoiseKind::kGaussian) {
  if (!(lambda >= 0.0)) throw ConfigError("ldp lambda must be >= 0");
  if (lambda == 0.0) return params;
  ParamVector out = params;
  Tensor& w = out.flat();
  if (kind == NoiseKind::kGaussian) {
    std::normal_distribution<double> n(0.0, lambda);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += n(rng);
  } else {
    const double b = lambda / std::sqrt(2.0);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (std::size_t i = 0; i < w.size(); ++i) {
      double x = u(rng);
      while (x == -0.5) x = u(rng);
      const double s = x < 0.0 ? -1.0 : 1.0;
      w[i] -= b * s * std::log1p(-2.0 * std::abs(x));
    }
  }
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are
// rethrown in index order so failures do not depend on scheduling.
inline void ParallelFor(std::size_t n, std::size_t threads,
                        const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

// MSE and MAE over every predicted element of every test window.
inline Metrics Evaluate(const ModelSpec& spec, const ParamVector& params,
                        std::span<const WindowDataset> tests) {
  double se = 0.0, ae = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 1024;
  for (const auto& ds : tests) {
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
      const std::size_t end = std::min(ds.size(), start + kChunk);
      std::vector<std::size_t> rows(end - start);
      std::iota(rows.begin(), rows.end(), start);
      const Batch b = ds.Gather(rows);
      const Tensor pred = Predict(spec, params, b.x);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - b.y[i];
        se += r * r;
        ae += std::abs(r);
      }
      count += pred.size();
    }
  }
  if (count == 0) throw Error("evaluate: no test windows");
  return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

struct RoundReport {
  std::size_t round = 0;  // 1-based: round r turns W^{r-1} into W^r
  std::vector<std::string> participants;
  std::vector<double> client_train_loss;  // aligned with participants
  double test_mse = 0.0;
  double test_mae = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;            // includes synthetic payloads
  std::uint64_t bytes_down_synthetic = 0;  // synthetic-data share of bytes_down
  double wall_seconds = 0.0;

  double mean_train_loss() const {
    if (client_train_loss.empty()) return 0.0;
    double s = 0.0;
    for (double v : client_train_loss) s += v;
    return s / static_cast<double>(client_train_loss.size());
  }
};

struct RoundOptions {
  TrainConfig train;
  double participation = 1.0;  // fraction of clients sampled per round
  std::size_t threads = 1;
  std::uint64_t seed = 0;      // master seed; LDP and sampling derive from it
};

struct RoundOutcome {
  ParamVector global;                  // after the post-aggregation hook
  std::vector<std::size_t> participants;
  std::vector<ParamVector> uploads;    // what the server received, per participant
  RoundReport report;
};

// Called with the aggregated model and the round's uploads; returns the model
// that becomes the new global (e.g. after refinement).
using PostAggregateHook =
    std::function<ParamVector(ParamVector aggregated, const RoundOutcome&)>;

inline std::vector<std::size_t> SampleParticipants(std::size_t num_clients,
                                                   double fraction,
                                                   std::uint64_t seed,
                                                   std::size_t round) {
  std::vector<std::size_t> all(num_clients);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (fraction >= 1.0) return all;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(num_clients))));
  Rng rng = MakeRng(seed, "participants", {round});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(k, num_clients));
  std::sort(all.begin(), all.end());
  return all;
}

// One federated round: sample participants, broadcast the global model,
// train locally (in parallel), add LDP noise client-side, aggregate, run the
// optional post-aggregation hook, and evaluate on the test windows.
inline RoundOutcome RunRound(const ModelSpec& spec, const ParamVector& global,
                             std::span<const ClientState> clients,
                             const SyntheticDataset* synthetic,
                             const RoundOptions& opts, std::size_t round,
                             std::span<const WindowDataset> tests,
                             const PostAggregateHook& post_aggregate = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RoundOutcome out;
  out.participants = SampleParticipants(clients.size(), opts.participation,
                                        opts.seed, round);
  const std::size_t k = out.participants.size();
  std::vector<LocalResult> results(k);
  ParallelFor(k, opts.threads, [&](std::size_t j) {
    const ClientState& c = clients[out.participants[j]];
    try {
      results[j] = LocalTrain(spec, c, global, synthetic, opts.train, round);
    } catch (const NumericError&) {
      throw;
    } catch (const std::exception& e) {
      const std::string msg = e.what();
      if (msg.find(c.id) != std::string::npos) throw;
      throw Error("client '" + c.id + "': " + msg);
    }
    if (opts.train.ldp_lambda > 0.0) {
      Rng rng = MakeRng(opts.seed, "ldp", {round, out.participants[j]});
      results[j].params = ApplyLdp(results[j].params, opts.train.ldp_lambda,
                                   rng, opts.train.ldp_kind);
    }
  });

  std::vector<ClientUpdate> updates;
  updates.reserve(k);
  const std::uint64_t model_bytes =
      static_cast<std::uint64_t>(global.size()) * sizeof(double);
  for (std::size_t j = 0; j < k; ++j) {
    const ClientState& c = clients[out.participants[j]];
    out.report.participants.push_back(c.id);
    out.report.client_train_loss.push_back(results[j].mean_loss);
    updates.push_back({results[j].params, c.dataset_size()});
    out.report.bytes_up += model_bytes;
    out.report.bytes_down += model_bytes;
  }
  ParamVector aggregated = Aggregate(updates);
  out.uploads.reserve(k);
  for (auto& u : updates) out.uploads.push_back(std::move(u.params));

  out.report.round = round;
  out.global = post_aggregate ? post_aggregate(std::move(aggregated), out)
                              : std::move(aggregated);
  const Metrics m = Evaluate(spec, out.global, tests);
  out.report.test_mse = m.mse;
  out.report.test_mae = m.mae;
  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace tsfed

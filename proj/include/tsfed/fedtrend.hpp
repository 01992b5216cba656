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

// Experiment orchestration: data preparation, the method zoo (centralized,
// FedAvg, FedProx, FedTrend and the LDP variants), scheduled synthetic-data
// builds, D_ct dissemination and post-aggregation refinement on D_gt.

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

#include "tsfed/condense.hpp"
#include "tsfed/data.hpp"
#include "tsfed/error.hpp"
#include "tsfed/flcore.hpp"
#include "tsfed/models.hpp"
#include "tsfed/rng.hpp"
#include "tsfed/synthetic.hpp"

namespace tsfed {

enum class Method {
  kCentralized,
  kFedAvg,
  kFedProx,
  kFedTrend,
  kFedAvgLdp,
  kFedTrendLdp,
};

inline const char* MethodName(Method m) {
  switch (m) {
    case Method::kCentralized: return "centralized";
    case Method::kFedAvg: return "fedavg";
    case Method::kFedProx: return "fedprox";
    case Method::kFedTrend: return "fedtrend";
    case Method::kFedAvgLdp: return "fedavg+ldp";
    case Method::kFedTrendLdp: return "fedtrend+ldp";
  }
  return "?";
}

inline Method ParseMethod(const std::string& s) {
  for (Method m : {Method::kCentralized, Method::kFedAvg, Method::kFedProx,
                   Method::kFedTrend, Method::kFedAvgLdp, Method::kFedTrendLdp}) {
    if (s == MethodName(m)) return m;
  }
  throw ConfigError("method: unknown value '" + s +
                    "' (expected centralized, fedavg, fedprox, fedtrend, "
                    "fedavg+ldp or fedtrend+ldp)");
}

inline bool UsesSynthetic(Method m) {
  return m == Method::kFedTrend || m == Method::kFedTrendLdp;
}

inline bool UsesLdp(Method m) {
  return m == Method::kFedAvgLdp || m == Method::kFedTrendLdp;
}

// Components switched off for an ablation run. All three together is FedAvg.
struct AblationFlags {
  bool no_cu = false;   // all-ones masks instead of consistency masks
  bool no_dct = false;  // no D_ct builds or dissemination
  bool no_dgt = false;  // no D_gt builds or refinement

  std::string Label() const {
    std::string s = "full";
    if (no_cu || no_dct || no_dgt) s.clear();
    auto add = [&](bool on, const char* tag) {
      if (!on) return;
      if (!s.empty()) s += ",";
      s += tag;
    };
    add(no_cu, "-cu");
    add(no_dct, "-dct");
    add(no_dgt, "-dgt");
    return s;
  }
};

enum class DataSource { kFleet, kCsv };

struct DataConfig {
  DataSource source = DataSource::kFleet;
  std::string csv_path;
  CsvLayout csv_layout = CsvLayout::kColumnsAsClients;
  FleetConfig fleet;
  double train_frac = 0.7;
  std::size_t stride = 1;
};

struct ExperimentConfig {
  Method method = Method::kFedTrend;
  // Second method run on the same data and seed (comparison mode); the
  // experiment itself ignores it.
  std::optional<Method> method_b;
  AblationFlags ablation;
  std::size_t rounds = 80;
  std::size_t l_ct = 10;
  std::size_t l_gt = 10;
  std::size_t refine_steps = 10;
  double refine_lr = 5e-4;
  TrainConfig train;
  double fedprox_mu = 0.01;   // used by method fedprox
  double ldp_lambda = 0.001;  // used by the +ldp methods
  NoiseKind ldp_kind = NoiseKind::kGaussian;
  CondenseConfig ct = [] {
    CondenseConfig c;
    c.size = 20;
    return c;
  }();
  CondenseConfig gt = [] {
    CondenseConfig c;
    c.size = 10;
    c.segment_len = 5;
    return c;
  }();
  ModelSpec model;
  DataConfig data;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double participation = 1.0;

  void Validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (l_ct < 1) throw ConfigError("l_ct must be >= 1");
    if (l_gt < 1) throw ConfigError("l_gt must be >= 1");
    if (!(refine_lr >= 0.0)) throw ConfigError("refine.lr must be >= 0");
    if (!(participation > 0.0 && participation <= 1.0)) {
      throw ConfigError("participation must lie in (0, 1]");
    }
    if (!(fedprox_mu >= 0.0)) throw ConfigError("fedprox.mu must be >= 0");
    if (!(ldp_lambda >= 0.0)) throw ConfigError("ldp.lambda must be >= 0");
    train.Validate();
    model.Validate();
    if (UsesSynthetic(method)) {
      ct.Validate("ct");
      gt.Validate("gt");
      if (!ablation.no_dct && l_ct > rounds) {
        throw ConfigError("l_ct (" + std::to_string(l_ct) +
                          ") exceeds rounds (" + std::to_string(rounds) + ")");
      }
      if (!ablation.no_dgt && gt.segment_len > l_gt) {
        throw ConfigError("gt.segment_len (" + std::to_string(gt.segment_len) +
                          ") exceeds l_gt (" + std::to_string(l_gt) +
                          "); the first D_gt build would have no segment");
      }
    }
    if (data.source == DataSource::kCsv && data.csv_path.empty()) {
      throw ConfigError("data.path is required when data.source = csv");
    }
    if (data.source == DataSource::kFleet) data.fleet.Validate();
    if (!(data.train_frac > 0.0 && data.train_frac < 1.0)) {
      throw ConfigError("data.train_frac must lie in (0, 1)");
    }
    if (data.stride < 1) throw ConfigError("data.stride must be >= 1");
  }
};

// Normalized, windowed per-client data ready for a federation.
struct Federation {
  std::vector<ClientState> clients;
  std::vector<WindowDataset> tests;
  NormStats norm;
};

inline Federation BuildFederation(const SeriesStore& raw, const ModelSpec& spec,
                                  double train_frac, std::size_t stride,
                                  std::uint64_t seed) {
  const std::size_t min_len = spec.input_len + spec.output_len;
  raw.Validate(min_len);
  const SplitStores split = Split(raw, train_frac, min_len);
  Federation fed;
  fed.norm = ComputeNormStats(split.train);
  const SeriesStore train = Normalize(split.train, fed.norm);
  const SeriesStore test = Normalize(split.test, fed.norm);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& c = train.clients[i];
    fed.clients.push_back(
        {c.id, MakeWindows(c.values, spec.input_len, spec.output_len, stride),
         DeriveSeed(seed, "client", {HashString(c.id)})});
    fed.tests.push_back(MakeWindows(test.clients[i].values, spec.input_len,
                                    spec.output_len, stride));
  }
  return fed;
}

inline SeriesStore LoadSeries(const DataConfig& data, std::uint64_t seed) {
  if (data.source == DataSource::kCsv) return LoadCsv(data.csv_path, data.csv_layout);
  return GenerateFleet(data.fleet, DeriveSeed(seed, "fleet"));
}

// `steps` full-batch SGD steps on the synthetic pairs. A non-finite loss
// returns the input unchanged.
inline ParamVector RefineGlobal(const ModelSpec& spec, const ParamVector& global,
                                const SyntheticDataset* d_gt,
                                std::size_t steps, double lr) {
  if (d_gt == nullptr || d_gt->size() == 0 || steps == 0) return global;
  ParamVector w = global;
  for (std::size_t k = 0; k < steps; ++k) {
    const LossGrad lg = EvalLossGrad(spec, w, Batch{d_gt->x, d_gt->y});
    if (!std::isfinite(lg.loss) || !lg.grad.AllFinite()) {
      spdlog::warn("refinement hit a non-finite loss at step {}; keeping the "
                   "aggregated model", k);
      return global;
    }
    Tensor& f = w.flat();
    for (std::size_t i = 0; i < f.size(); ++i) f[i] -= lr * lg.grad[i];
  }
  if (!w.flat().AllFinite()) return global;
  return w;
}

struct BuildRecord {
  Provenance provenance = Provenance::kClientTrajectory;
  std::size_t round = 0;
  std::size_t segments = 0;
  bool ok = false;
  std::vector<double> trace;
};

struct RunResult {
  Method method = Method::kFedAvg;
  AblationFlags ablation;
  std::uint64_t seed = 0;
  std::vector<RoundReport> reports;
  Metrics final_metrics;
  ParamVector final_params;
  std::vector<BuildRecord> builds;
  std::optional<SyntheticDataset> last_dct;
  std::optional<SyntheticDataset> last_dgt;
  std::size_t num_clients = 0;
  double wall_seconds = 0.0;

  // D_ct payload bytes sent to all clients over the run.
  std::uint64_t synthetic_bytes_down() const {
    std::uint64_t s = 0;
    for (const auto& r : reports) s += r.bytes_down_synthetic;
    return s;
  }
};

namespace detail {

inline RunResult RunCentralized(const ExperimentConfig& cfg,
                                const Federation& fed) {
  RunResult res;
  ClientState pooled{"pooled", WindowDataset(cfg.model.input_len, cfg.model.output_len),
                     DeriveSeed(cfg.seed, "client", {HashString("pooled")})};
  std::size_t max_client = 0;
  for (const auto& c : fed.clients) {
    pooled.train.AppendAll(c.train);
    max_client = std::max(max_client, c.dataset_size());
  }
  // Same number of optimizer steps per round as the largest client.
  RoundOptions opts;
  opts.train = cfg.train;
  opts.train.fedprox_mu = 0.0;
  opts.train.ldp_lambda = 0.0;
  opts.train.max_steps =
      cfg.train.local_epochs * ((max_client + cfg.train.batch - 1) / cfg.train.batch);
  opts.seed = cfg.seed;
  ParamVector global = InitParams(cfg.model, DeriveSeed(cfg.seed, "init_model"));
  const std::vector<ClientState> one{std::move(pooled)};
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    RoundOutcome out = RunRound(cfg.model, global, one, nullptr, opts, r, fed.tests);
    out.report.bytes_up = out.report.bytes_down = 0;
    global = std::move(out.global);
    res.reports.push_back(std::move(out.report));
  }
  res.final_params = std::move(global);
  return res;
}

}  // namespace detail

inline RunResult RunExperiment(const ExperimentConfig& cfg, const Federation& fed) {
  cfg.Validate();
  if (fed.clients.empty()) throw ConfigError("no clients");
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  if (cfg.method == Method::kCentralized) {
    res = detail::RunCentralized(cfg, fed);
  } else {
    RoundOptions opts;
    opts.train = cfg.train;
    opts.train.fedprox_mu = cfg.method == Method::kFedProx ? cfg.fedprox_mu : 0.0;
    opts.train.ldp_lambda = UsesLdp(cfg.method) ? cfg.ldp_lambda : 0.0;
    opts.train.ldp_kind = cfg.ldp_kind;
    opts.participation = cfg.participation;
    opts.threads = cfg.threads;
    opts.seed = cfg.seed;

    const bool synth = UsesSynthetic(cfg.method);
    const bool do_dct = synth && !cfg.ablation.no_dct;
    const bool do_dgt = synth && !cfg.ablation.no_dgt;

    ParamVector global = InitParams(cfg.model, DeriveSeed(cfg.seed, "init_model"));
    ClientTrajectoryBank ct_bank(cfg.l_ct);
    GlobalTrajectoryBank gt_bank;
    if (do_dct) {
      for (const auto& c : fed.clients) ct_bank.Record(c.id, global, 0);
    }
    if (do_dgt) gt_bank.Append(0, global);
    std::optional<SyntheticDataset> dct, dgt;

    PostAggregateHook hook = [&](ParamVector agg, const RoundOutcome& o) {
      const std::size_t r = o.report.round;
      if (do_dct) {
        for (std::size_t j = 0; j < o.participants.size(); ++j) {
          ct_bank.Record(fed.clients[o.participants[j]].id, o.uploads[j], r);
        }
      }
      if (!do_dgt) return agg;
      gt_bank.Append(r, agg);
      if (!dgt) return agg;
      return RefineGlobal(cfg.model, agg, &*dgt, cfg.refine_steps, cfg.refine_lr);
    };

    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
      // RunRound reports the round it was given; the hook reads it back.
      RoundOutcome out = RunRound(cfg.model, global, fed.clients,
                                  dct ? &*dct : nullptr, opts, r, fed.tests,
                                  synth ? hook : PostAggregateHook{});
      global = std::move(out.global);
      RoundReport& rep = out.report;

      if (do_dct && r % cfg.l_ct == 0) {
        BuildRecord rec{Provenance::kClientTrajectory, r, 0, false, {}};
        std::vector<TrajectorySegment> segs = ct_bank.TakeCompleted();
        rec.segments = segs.size();
        if (!segs.empty()) {
          try {
            BuildResult b = BuildClientSynthetic(
                segs, cfg.model, cfg.ct, DeriveSeed(cfg.seed, "dct_build", {r}), r,
                !cfg.ablation.no_cu);
            rec.trace = std::move(b.trace);
            rec.ok = true;
            dct = std::move(b.data);
            // Broadcast to every client at the boundary.
            const std::uint64_t bytes =
                dct->SerializedBytes() * static_cast<std::uint64_t>(fed.clients.size());
            rep.bytes_down += bytes;
            rep.bytes_down_synthetic += bytes;
          } catch (const NumericError& e) {
            spdlog::warn("D_ct build at round {} failed ({}); keeping the "
                         "previous dataset", r, e.what());
          }
        }
        res.builds.push_back(std::move(rec));
      }
      if (do_dgt && r % cfg.l_gt == 0) {
        BuildRecord rec{Provenance::kGlobalTrajectory, r, 0, false, {}};
        rec.segments = gt_bank.size() - cfg.gt.segment_len;
        try {
          BuildResult b = BuildGlobalSynthetic(
              gt_bank, cfg.model, cfg.gt, DeriveSeed(cfg.seed, "dgt_build", {r}), r);
          rec.trace = std::move(b.trace);
          rec.ok = true;
          dgt = std::move(b.data);
        } catch (const NumericError& e) {
          spdlog::warn("D_gt build at round {} failed ({}); keeping the "
                       "previous dataset", r, e.what());
        }
        res.builds.push_back(std::move(rec));
      }
      spdlog::debug("{} round {} mse={:.6f} mae={:.6f}", MethodName(cfg.method),
                    r, rep.test_mse, rep.test_mae);
      res.reports.push_back(std::move(rep));
    }
    res.final_params = std::move(global);
    res.last_dct = std::move(dct);
    res.last_dgt = std::move(dgt);
  }
  res.method = cfg.method;
  res.ablation = cfg.ablation;
  res.seed = cfg.seed;
  res.num_clients = fed.clients.size();
  res.final_metrics = {res.reports.back().test_mse, res.reports.back().test_mae};
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline RunResult RunExperiment(const ExperimentConfig& cfg) {
  cfg.Validate();
  const Federation fed =
      BuildFederation(LoadSeries(cfg.data, cfg.seed), cfg.model,
                      cfg.data.train_frac, cfg.data.stride, cfg.seed);
  return RunExperiment(cfg, fed);
}

// FedTrend with the named components removed.
inline RunResult Ablate(ExperimentConfig cfg, const AblationFlags& flags,
                        const Federation& fed) {
  if (!UsesSynthetic(cfg.method)) cfg.method = Method::kFedTrend;
  cfg.ablation = flags;
  return RunExperiment(cfg, fed);
}

}  // namespace tsfed

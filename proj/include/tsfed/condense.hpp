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

// Trajectory banks and trajectory matching.
//
// A synthetic dataset is learned so that a few gradient-descent steps on it,
// started from a recorded parameter vector, land near a later recorded
// parameter vector. The distance is normalised by how far the recorded
// segment itself moved:
//
//   d = sum m * (w_trained - w_end)^2 / max(sum m * (w_start - w_end)^2, eps)
//
// and is differentiated through the unrolled inner steps with respect to the
// synthetic X and Y, which are then updated with Adam.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tsfed/autodiff.hpp"
#include "tsfed/error.hpp"
#include "tsfed/models.hpp"
#include "tsfed/param_vector.hpp"
#include "tsfed/rng.hpp"
#include "tsfed/synthetic.hpp"

namespace tsfed {

inline constexpr double kMatchEpsilon = 1e-12;

// 1 where both deltas are non-zero with the same sign, else 0.
inline Tensor ConsistencyMask(const ParamVector& prev_delta,
                              const ParamVector& cur_delta) {
  RequireSameLayout(prev_delta, cur_delta, "consistency_mask");
  Tensor mask({prev_delta.size()});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = prev_delta[i] * cur_delta[i] > 0.0 ? 1.0 : 0.0;
  }
  return mask;
}

inline ParamVector Delta(const ParamVector& to, const ParamVector& from) {
  RequireSameLayout(to, from, "delta");
  return to.WithFlat(sub(to.flat(), from.flat()));
}

// A recorded (start, end) pair with the coordinates allowed to contribute to
// the matching distance.
struct TrajectorySegment {
  std::string client;  // empty for global-model segments
  std::size_t start_round = 0;
  std::size_t end_round = 0;
  ParamVector start;
  ParamVector end;
  Tensor mask;  // 0/1 per parameter
};

// Per-client segment recorder. Parameters arrive once per round; a segment
// spans one interval [k*L, (k+1)*L] and its mask compares the client's last
// two round-to-round deltas at the closing boundary. Per client at most three
// vectors are held between rounds: the open segment's start, the previous
// round's parameters and the previous delta.
class ClientTrajectoryBank {
 public:
  explicit ClientTrajectoryBank(std::size_t interval) : interval_(interval) {
    if (interval_ < 1) throw ConfigError("trajectory interval must be >= 1");
  }

  std::size_t interval() const { return interval_; }

  void Record(const std::string& client, const ParamVector& params,
              std::size_t round) {
    Pending& p = pending_[client];
    if (p.prev && round <= p.prev_round) {
      throw Error("client '" + client + "': round " + std::to_string(round) +
                  " recorded after round " + std::to_string(p.prev_round));
    }
    std::optional<ParamVector> delta;
    if (p.prev && p.prev_round + 1 == round) delta = Delta(params, *p.prev);

    if (round % interval_ == 0) {
      if (p.start && p.start_round + interval_ == round) {
        TrajectorySegment seg;
        seg.client = client;
        seg.start_round = p.start_round;
        seg.end_round = round;
        seg.start = std::move(*p.start);
        seg.end = params;
        // Without two consecutive deltas there is no evidence of
        // inconsistency, so every coordinate stays.
        seg.mask = (delta && p.prev_delta)
                       ? ConsistencyMask(*p.prev_delta, *delta)
                       : Tensor({params.size()}, 1.0);
        completed_.push_back(std::move(seg));
      }
      p.start = params;
      p.start_round = round;
    } else if (p.start && round > p.start_round + interval_) {
      p.start.reset();  // the client missed the boundary that closes it
    }
    p.prev_delta = std::move(delta);
    p.prev = params;
    p.prev_round = round;
  }

  const std::vector<TrajectorySegment>& completed() const { return completed_; }

  // Hands the completed segments to a build and empties the bank.
  std::vector<TrajectorySegment> TakeCompleted() {
    return std::exchange(completed_, {});
  }

  std::size_t PendingVectors(const std::string& client) const {
    auto it = pending_.find(client);
    if (it == pending_.end()) return 0;
    const Pending& p = it->second;
    return (p.start ? 1 : 0) + (p.prev ? 1 : 0) + (p.prev_delta ? 1 : 0);
  }

 private:
  struct Pending {
    std::optional<ParamVector> start;
    std::size_t start_round = 0;
    std::optional<ParamVector> prev;
    std::size_t prev_round = 0;
    std::optional<ParamVector> prev_delta;
  };

  std::size_t interval_;
  std::map<std::string, Pending> pending_;
  std::vector<TrajectorySegment> completed_;
};

// Global model after every round; index == round.
class GlobalTrajectoryBank {
 public:
  void Append(std::size_t round, ParamVector params) {
    if (round != models_.size()) {
      throw Error("global trajectory expects round " +
                  std::to_string(models_.size()) + ", got " +
                  std::to_string(round));
    }
    models_.push_back(std::move(params));
  }

  std::size_t size() const { return models_.size(); }
  const ParamVector& at(std::size_t round) const { return models_.at(round); }

 private:
  std::vector<ParamVector> models_;
};

// Differentiable matching distance. `mask` may be null (every coordinate
// counts); the null path and an all-ones mask give bitwise equal values.
inline ad::Var MatchDistance(ad::Var trained, const ParamVector& end,
                             const ParamVector& start, const Tensor* mask) {
  RequireSameLayout(end, start, "match_distance");
  if (trained.value().size() != end.size()) {
    throw ShapeError("match_distance: trained vector has " +
                     std::to_string(trained.value().size()) +
                     " values, trajectory has " + std::to_string(end.size()));
  }
  ad::Tape& tape = *trained.tape();
  double denom = 0.0;
  for (std::size_t i = 0; i < end.size(); ++i) {
    const double d = start[i] - end[i];
    denom += (mask ? (*mask)[i] : 1.0) * d * d;
  }
  denom = std::max(denom, kMatchEpsilon);
  ad::Var sq = ad::square(ad::sub(trained, tape.Constant(end.flat())));
  if (mask != nullptr) sq = ad::mul(sq, tape.Constant(*mask));
  return ad::scale(ad::sum(sq), 1.0 / denom);
}

inline double MatchDistance(const ParamVector& trained, const ParamVector& end,
                            const ParamVector& start, const Tensor* mask) {
  ad::Tape tape;
  return MatchDistance(tape.Constant(trained.flat()), end, start, mask)
      .value()
      .item();
}

struct CondenseConfig {
  std::size_t iterations = 300;
  double adam_lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t inner_steps = 5;
  double inner_lr = 0.01;
  std::size_t size = 20;
  std::size_t segment_len = 5;  // global-trajectory segments only

  void Validate(const char* section) const {
    const std::string s = section;
    if (iterations < 1) throw ConfigError(s + ".iterations must be >= 1");
    if (size < 1) throw ConfigError(s + ".size must be >= 1");
    if (inner_steps < 1) throw ConfigError(s + ".inner_steps must be >= 1");
    if (!(adam_lr > 0.0)) throw ConfigError(s + ".adam_lr must be > 0");
    if (!(inner_lr > 0.0)) throw ConfigError(s + ".inner_lr must be > 0");
    if (segment_len < 1) throw ConfigError(s + ".segment_len must be >= 1");
  }
};

struct BuildResult {
  SyntheticDataset data;
  std::vector<double> trace;  // matching loss at every iteration
};

namespace detail {

inline void AdamStep(Tensor& param, const Tensor& grad, AdamState& st,
                     const CondenseConfig& cfg) {
  if (st.m.size() != param.size()) {
    st.m = Tensor(param.shape(), 0.0);
    st.v = Tensor(param.shape(), 0.0);
    st.steps = 0;
  }
  ++st.steps;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.steps));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.steps));
  for (std::size_t i = 0; i < param.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
    param[i] -= cfg.adam_lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + cfg.adam_eps);
  }
}

}  // namespace detail

// Matching loss and its gradient with respect to the synthetic tensors for
// one segment. Exposed separately so it can be checked against finite
// differences.
struct MatchStep {
  double loss = 0.0;
  Tensor grad_x;
  Tensor grad_y;
};

inline MatchStep MatchLossGrad(const ModelSpec& spec, const Tensor& x,
                               const Tensor& y, const ParamVector& start,
                               const ParamVector& end, const Tensor* mask,
                               std::size_t inner_steps, double inner_lr) {
  ad::Tape tape;
  ad::Var xv = tape.Leaf(x);
  ad::Var yv = tape.Leaf(y);
  ad::Var w0 = tape.Constant(start.flat());
  ad::Var trained = ad::unrolled_sgd(
      w0, [&](ad::Var w) { return Loss(spec, w, xv, yv); },
      static_cast<int>(inner_steps), inner_lr);
  ad::Var d = MatchDistance(trained, end, start, mask);
  MatchStep out;
  out.loss = d.value().item();
  if (!std::isfinite(out.loss)) {
    throw NumericError("non-finite matching loss");
  }
  auto g = ad::grad(d, {xv, yv});
  out.grad_x = std::move(g[0]);
  out.grad_y = std::move(g[1]);
  return out;
}

// Starting point of a build: `size` pairs drawn from N(0, 1).
inline SyntheticDataset InitialSynthetic(const ModelSpec& spec, std::size_t size,
                                         std::uint64_t seed) {
  SyntheticDataset ds;
  ds.x = Tensor({size, spec.input_len});
  ds.y = Tensor({size, spec.output_len});
  Rng init = MakeRng(seed, "synthetic_init");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : ds.x.vec()) v = normal(init);
  for (double& v : ds.y.vec()) v = normal(init);
  return ds;
}

// The shared trajectory-matching loop. Synthetic pairs start from N(0, 1);
// each iteration samples one segment uniformly.
inline BuildResult Condense(const ModelSpec& spec,
                            const std::vector<TrajectorySegment>& segments,
                            bool use_masks, const CondenseConfig& cfg,
                            std::uint64_t seed, Provenance provenance,
                            std::size_t build_round) {
  cfg.Validate(ProvenanceTag(provenance));
  if (segments.empty()) throw Error("condense: no trajectory segments");
  BuildResult out;
  out.data = InitialSynthetic(spec, cfg.size, seed);
  SyntheticDataset& ds = out.data;
  ds.provenance = provenance;
  ds.build_round = build_round;

  Rng pick = MakeRng(seed, "segment_sample");
  std::uniform_int_distribution<std::size_t> which(0, segments.size() - 1);
  out.trace.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const TrajectorySegment& seg = segments[which(pick)];
    MatchStep step;
    try {
      step = MatchLossGrad(spec, ds.x, ds.y, seg.start, seg.end,
                           use_masks ? &seg.mask : nullptr, cfg.inner_steps,
                           cfg.inner_lr);
    } catch (const NumericError& e) {
      throw NumericError(std::string(ProvenanceTag(provenance)) +
                         " build at round " + std::to_string(build_round) +
                         ", iteration " + std::to_string(it) + ": " + e.what());
    }
    out.trace.push_back(step.loss);
    detail::AdamStep(ds.x, step.grad_x, ds.x_opt, cfg);
    detail::AdamStep(ds.y, step.grad_y, ds.y_opt, cfg);
  }
  if (!ds.AllFinite()) {
    throw NumericError("synthetic data became non-finite");
  }
  return out;
}

// Client-trajectory dataset from the bank's completed segments. The caller
// empties the bank afterwards (TakeCompleted) so builds never share a segment.
inline BuildResult BuildClientSynthetic(
    const std::vector<TrajectorySegment>& segments, const ModelSpec& spec,
    const CondenseConfig& cfg, std::uint64_t seed, std::size_t build_round,
    bool use_masks = true) {
  if (segments.empty()) {
    throw Error("client-trajectory build needs at least one completed segment");
  }
  return Condense(spec, segments, use_masks, cfg, seed,
                  Provenance::kClientTrajectory, build_round);
}

// Every (W^s, W^{s+L}) with 0 <= s <= size-1-L.
inline std::vector<TrajectorySegment> GlobalSegments(
    const GlobalTrajectoryBank& bank, std::size_t segment_len) {
  if (bank.size() <= segment_len) {
    throw Error("global trajectory of length " + std::to_string(bank.size()) +
                " is too short for segments of " + std::to_string(segment_len));
  }
  std::vector<TrajectorySegment> segs;
  for (std::size_t s = 0; s + segment_len < bank.size(); ++s) {
    TrajectorySegment seg;
    seg.start_round = s;
    seg.end_round = s + segment_len;
    seg.start = bank.at(s);
    seg.end = bank.at(s + segment_len);
    seg.mask = Tensor({seg.start.size()}, 1.0);
    segs.push_back(std::move(seg));
  }
  return segs;
}

inline BuildResult BuildGlobalSynthetic(const GlobalTrajectoryBank& bank,
                                        const ModelSpec& spec,
                                        const CondenseConfig& cfg,
                                        std::uint64_t seed,
                                        std::size_t build_round) {
  return Condense(spec, GlobalSegments(bank, cfg.segment_len), false, cfg,
                  seed, Provenance::kGlobalTrajectory, build_round);
}

}  // namespace tsfed

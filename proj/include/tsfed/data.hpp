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

// Time-series ingestion: CSV loading, chronological splitting, per-client
// z-scoring, sliding windows, and a synthetic heterogeneous fleet generator.

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsfed/error.hpp"
#include "tsfed/models.hpp"
#include "tsfed/rng.hpp"
#include "tsfed/tensor.hpp"

namespace tsfed {

struct ClientSeries {
  std::string id;
  std::vector<double> values;
  std::vector<std::string> timestamps;  // empty when the source had none

  friend bool operator==(const ClientSeries&, const ClientSeries&) = default;
};

// One univariate series per client.
struct SeriesStore {
  std::vector<ClientSeries> clients;

  std::size_t size() const { return clients.size(); }

  // Client ids unique and every series at least `min_len` long.
  void Validate(std::size_t min_len) const {
    std::set<std::string> seen;
    for (const auto& c : clients) {
      if (!seen.insert(c.id).second) {
        throw ConfigError("duplicate client id '" + c.id + "'");
      }
      if (c.values.size() < min_len) {
        throw ConfigError("client '" + c.id + "' has " +
                          std::to_string(c.values.size()) +
                          " points, need at least " + std::to_string(min_len));
      }
    }
  }
};

// Ordered (X, Y) pairs sharing one (L_x, L_y). Stored as two row-major
// blocks so batches can be gathered without per-pair allocation.
class WindowDataset {
 public:
  WindowDataset() = default;
  WindowDataset(std::size_t input_len, std::size_t output_len)
      : input_len_(input_len), output_len_(output_len) {}

  std::size_t input_len() const { return input_len_; }
  std::size_t output_len() const { return output_len_; }
  std::size_t size() const {
    return input_len_ == 0 ? 0 : xs_.size() / input_len_;
  }
  bool empty() const { return size() == 0; }

  std::span<const double> x(std::size_t i) const {
    return {xs_.data() + i * input_len_, input_len_};
  }
  std::span<const double> y(std::size_t i) const {
    return {ys_.data() + i * output_len_, output_len_};
  }

  void Append(std::span<const double> x, std::span<const double> y) {
    if (x.size() != input_len_ || y.size() != output_len_) {
      throw ShapeError("window pair (" + std::to_string(x.size()) + ", " +
                       std::to_string(y.size()) + ") does not match (" +
                       std::to_string(input_len_) + ", " +
                       std::to_string(output_len_) + ")");
    }
    xs_.insert(xs_.end(), x.begin(), x.end());
    ys_.insert(ys_.end(), y.begin(), y.end());
  }

  void AppendAll(const WindowDataset& other) {
    for (std::size_t i = 0; i < other.size(); ++i) Append(other.x(i), other.y(i));
  }

  // Gathers the given rows into a batch.
  Batch Gather(std::span<const std::size_t> rows) const {
    if (rows.empty()) throw Error("cannot build an empty batch");
    Tensor bx({rows.size(), input_len_});
    Tensor by({rows.size(), output_len_});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t i = rows[r];
      std::copy_n(xs_.begin() + static_cast<std::ptrdiff_t>(i * input_len_),
                  input_len_, bx.data().begin() + r * input_len_);
      std::copy_n(ys_.begin() + static_cast<std::ptrdiff_t>(i * output_len_),
                  output_len_, by.data().begin() + r * output_len_);
    }
    return {std::move(bx), std::move(by)};
  }

  Batch All() const {
    std::vector<std::size_t> rows(size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return Gather(rows);
  }

  const std::vector<double>& xs() const { return xs_; }
  const std::vector<double>& ys() const { return ys_; }

  friend bool operator==(const WindowDataset&, const WindowDataset&) = default;

 private:
  std::size_t input_len_ = 0;
  std::size_t output_len_ = 0;
  std::vector<double> xs_;
  std::vector<double> ys_;
};

// X = points [j, j+L_x), Y = points [j+L_x, j+L_x+L_y) for
// j = 0, stride, 2*stride, ...
inline WindowDataset MakeWindows(std::span<const double> series,
                                 std::size_t input_len, std::size_t output_len,
                                 std::size_t stride = 1) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  const std::size_t span = input_len + output_len;
  if (series.size() < span) {
    throw ConfigError("series of length " + std::to_string(series.size()) +
                      " is shorter than one window (" + std::to_string(span) +
                      ")");
  }
  WindowDataset ds(input_len, output_len);
  const std::size_t count = (series.size() - span) / stride + 1;
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t j = w * stride;
    ds.Append(series.subspan(j, input_len),
              series.subspan(j + input_len, output_len));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV.

enum class CsvLayout {
  kColumnsAsClients,  // every value column is one client
  kSingleClient,      // the last value column is the only client
};

inline CsvLayout ParseCsvLayout(const std::string& s) {
  if (s == "columns" || s == "columns-as-clients") {
    return CsvLayout::kColumnsAsClients;
  }
  if (s == "single" || s == "single-client") return CsvLayout::kSingleClient;
  throw ConfigError("data.layout: expected 'columns-as-clients' or "
                    "'single-client', got '" + s + "'");
}

namespace detail {

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' ||
                        s.back() == '\r' || s.back() == '\n')) {
    s.remove_suffix(1);
  }
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

inline std::vector<std::string_view> SplitCsvLine(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(Trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline bool IsMissing(std::string_view s) {
  return s.empty() || s == "nan" || s == "NaN" || s == "NAN" || s == "NA" ||
         s == "null" || s == "NULL";
}

inline std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(c));
  return out;
}

}  // namespace detail

// Header row required; an optional first column named date/timestamp is kept
// as timestamps and not modelled. Missing cells are forward-filled, leading
// gaps back-filled.
inline SeriesStore LoadCsv(std::istream& in,
                           CsvLayout layout = CsvLayout::kColumnsAsClients) {
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++row;
    if (!detail::Trim(line).empty()) {
      for (auto f : detail::SplitCsvLine(line)) header.emplace_back(f);
      break;
    }
  }
  if (header.empty()) throw ParseError("empty CSV file", 0, 0);

  const std::string first = detail::Lower(header[0]);
  const bool has_time = first == "date" || first == "timestamp";
  const std::size_t first_value = has_time ? 1 : 0;
  if (header.size() <= first_value) {
    throw ParseError("CSV has no value columns", 1, 0);
  }
  const std::size_t ncols = header.size() - first_value;

  std::vector<std::vector<std::optional<double>>> cols(ncols);
  std::vector<std::string> stamps;
  while (std::getline(in, line)) {
    ++row;
    if (detail::Trim(line).empty()) continue;
    auto fields = detail::SplitCsvLine(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) +
                           " fields, found " + std::to_string(fields.size()),
                       row, 0);
    }
    if (has_time) stamps.emplace_back(fields[0]);
    for (std::size_t c = 0; c < ncols; ++c) {
      std::string_view f = fields[first_value + c];
      if (detail::IsMissing(f)) {
        cols[c].push_back(std::nullopt);
        continue;
      }
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw ParseError("non-numeric value '" + std::string(f) + "'", row,
                         first_value + c + 1);
      }
      cols[c].push_back(v);
    }
  }
  if (cols[0].empty()) throw ParseError("CSV has a header but no data rows", 0, 0);

  SeriesStore store;
  for (std::size_t c = 0; c < ncols; ++c) {
    if (layout == CsvLayout::kSingleClient && c + 1 != ncols) continue;
    auto& col = cols[c];
    std::optional<double> last;
    for (auto& v : col) {
      if (v) last = v;
      else if (last) v = last;
    }
    auto first_known = std::find_if(col.begin(), col.end(),
                                     [](const auto& v) { return v.has_value(); });
    if (first_known == col.end()) {
      throw ParseError("column '" + header[first_value + c] +
                           "' has no numeric values",
                       0, first_value + c + 1);
    }
    for (auto it = col.begin(); it != first_known; ++it) *it = *first_known;
    ClientSeries cs;
    cs.id = header[first_value + c];
    cs.values.reserve(col.size());
    for (const auto& v : col) cs.values.push_back(*v);
    cs.timestamps = stamps;
    store.clients.push_back(std::move(cs));
  }
  return store;
}

inline SeriesStore LoadCsv(const std::string& path,
                           CsvLayout layout = CsvLayout::kColumnsAsClients) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file '" + path + "'");
  return LoadCsv(in, layout);
}

inline std::string FormatDouble(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Column layout: one column per client, optional leading `date` column when
// the first client carries timestamps. All series must have equal length.
inline void WriteCsv(const SeriesStore& store, std::ostream& out) {
  if (store.clients.empty()) throw Error("cannot write an empty series store");
  const std::size_t len = store.clients[0].values.size();
  for (const auto& c : store.clients) {
    if (c.values.size() != len) {
      throw Error("column CSV needs equal-length series; client '" + c.id +
                  "' differs");
    }
  }
  const bool with_time = store.clients[0].timestamps.size() == len;
  if (with_time) out << "date";
  for (std::size_t i = 0; i < store.clients.size(); ++i) {
    if (with_time || i > 0) out << ',';
    out << store.clients[i].id;
  }
  out << '\n';
  for (std::size_t t = 0; t < len; ++t) {
    if (with_time) out << store.clients[0].timestamps[t];
    for (std::size_t i = 0; i < store.clients.size(); ++i) {
      if (with_time || i > 0) out << ',';
      out << FormatDouble(store.clients[i].values[t]);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splitting and normalization.

struct SplitStores {
  SeriesStore train;
  SeriesStore test;
};

// Chronological prefix/suffix split per client; each side must hold at least
// `min_len` points.
inline SplitStores Split(const SeriesStore& store, double train_frac,
                         std::size_t min_len) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  SplitStores out;
  for (const auto& c : store.clients) {
    const std::size_t n = c.values.size();
    const auto cut = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * train_frac + 1e-9));
    if (cut < min_len || n - cut < min_len) {
      throw ConfigError("client '" + c.id + "': split of " + std::to_string(n) +
                        " points at " + std::to_string(cut) +
                        " leaves a side shorter than " + std::to_string(min_len));
    }
    ClientSeries tr{c.id, {c.values.begin(), c.values.begin() + static_cast<std::ptrdiff_t>(cut)}, {}};
    ClientSeries te{c.id, {c.values.begin() + static_cast<std::ptrdiff_t>(cut), c.values.end()}, {}};
    if (c.timestamps.size() == n) {
      tr.timestamps.assign(c.timestamps.begin(), c.timestamps.begin() + static_cast<std::ptrdiff_t>(cut));
      te.timestamps.assign(c.timestamps.begin() + static_cast<std::ptrdiff_t>(cut), c.timestamps.end());
    }
    out.train.clients.push_back(std::move(tr));
    out.test.clients.push_back(std::move(te));
  }
  return out;
}

inline constexpr double kStdFloor = 1e-8;

struct ClientNorm {
  double mean = 0.0;
  double std = 1.0;
};

// Per-client statistics, index-aligned with the store they came from.
struct NormStats {
  std::vector<ClientNorm> clients;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// Population mean/std of each (training) series; std floored at 1e-8.
inline NormStats ComputeNormStats(const SeriesStore& train) {
  NormStats stats;
  for (const auto& c : train.clients) {
    double m = 0.0;
    for (double v : c.values) m += v;
    m /= static_cast<double>(c.values.size());
    double var = 0.0;
    for (double v : c.values) var += (v - m) * (v - m);
    var /= static_cast<double>(c.values.size());
    stats.clients.push_back({m, std::max(std::sqrt(var), kStdFloor)});
  }
  return stats;
}

inline SeriesStore Normalize(const SeriesStore& store, const NormStats& stats) {
  if (stats.clients.size() != store.clients.size()) {
    throw Error("normalization statistics do not match the store");
  }
  SeriesStore out = store;
  for (std::size_t i = 0; i < out.clients.size(); ++i) {
    const auto [m, s] = stats.clients[i];
    for (double& v : out.clients[i].values) v = (v - m) / s;
  }
  return out;
}

inline SeriesStore Denormalize(const SeriesStore& store,
                               const NormStats& stats) {
  if (stats.clients.size() != store.clients.size()) {
    throw Error("normalization statistics do not match the store");
  }
  SeriesStore out = store;
  for (std::size_t i = 0; i < out.clients.size(); ++i) {
    const auto [m, s] = stats.clients[i];
    for (double& v : out.clients[i].values) v = v * s + m;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic fleet.

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double center() const { return 0.5 * (lo + hi); }
  double width() const { return hi - lo; }
};

// Client i produces a_i sin(2 pi f_i t + phi_i) + s_i t + noise. Each
// per-client parameter is center + h * (u - 1/2) * width with u ~ U(0,1) and
// h the heterogeneity knob, so h = 0 gives every client the same parameters.
struct FleetConfig {
  std::size_t num_clients = 8;
  std::size_t series_length = 4000;
  Range amplitude{0.5, 2.0};
  Range frequency{1.0 / 48.0, 1.0 / 8.0};
  Range phase{0.0, 2.0 * std::numbers::pi};
  Range slope{-0.004, 0.004};
  double noise_std = 0.1;
  double heterogeneity = 0.5;

  void Validate() const {
    if (num_clients < 1) throw ConfigError("fleet.clients must be >= 1");
    if (series_length < 2) throw ConfigError("fleet.length must be >= 2");
    if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) {
      throw ConfigError("fleet.heterogeneity must lie in [0, 1]");
    }
    if (!(noise_std >= 0.0)) throw ConfigError("fleet.noise_std must be >= 0");
    const Range* ranges[] = {&amplitude, &frequency, &phase, &slope};
    bool any_width = false;
    for (const Range* r : ranges) {
      if (!(r->hi >= r->lo)) throw ConfigError("fleet range has hi < lo");
      any_width = any_width || r->width() > 0.0;
    }
    if (heterogeneity > 0.0 && !any_width) {
      throw ConfigError("fleet.heterogeneity > 0 needs at least one range "
                        "with positive width");
    }
  }
};

struct FleetClientParams {
  double amplitude, frequency, phase, slope;
};

inline FleetClientParams DrawFleetClient(const FleetConfig& cfg,
                                         std::uint64_t seed, std::size_t i) {
  Rng rng = MakeRng(seed, "fleet_params", {i});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const Range& r) {
    const double v = u(rng);
    return r.center() + cfg.heterogeneity * (v - 0.5) * r.width();
  };
  FleetClientParams p{};
  p.amplitude = draw(cfg.amplitude);
  p.frequency = draw(cfg.frequency);
  p.phase = draw(cfg.phase);
  p.slope = draw(cfg.slope);
  return p;
}

inline SeriesStore GenerateFleet(const FleetConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  SeriesStore store;
  for (std::size_t i = 0; i < cfg.num_clients; ++i) {
    const FleetClientParams p = DrawFleetClient(cfg, seed, i);
    Rng noise_rng = MakeRng(seed, "fleet_noise", {i});
    std::normal_distribution<double> noise(0.0, 1.0);
    ClientSeries cs;
    char id[32];
    std::snprintf(id, sizeof(id), "client_%02zu", i);
    cs.id = id;
    cs.values.resize(cfg.series_length);
    for (std::size_t t = 0; t < cfg.series_length; ++t) {
      const double tt = static_cast<double>(t);
      const double eps = cfg.noise_std > 0.0 ? cfg.noise_std * noise(noise_rng) : 0.0;
      cs.values[t] = p.amplitude * std::sin(2.0 * std::numbers::pi *
                                                p.frequency * tt +
                                            p.phase) +
                     p.slope * tt + eps;
    }
    store.clients.push_back(std::move(cs));
  }
  return store;
}

}  // namespace tsfed

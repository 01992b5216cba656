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

// Run artifacts: metrics.csv, model.bin, synthetic dataset dumps, build loss
// traces and result.json. Every writer has a matching reader.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsfed/data.hpp"
#include "tsfed/error.hpp"
#include "tsfed/fedtrend.hpp"
#include "tsfed/param_vector.hpp"
#include "tsfed/synthetic.hpp"

namespace tsfed {

// ---------------------------------------------------------------------------
// metrics.csv: one row per (round, method). Wall time is kept out of this file
// so that it is a pure function of config and seed.

inline constexpr const char* kMetricsHeader =
    "round,method,seed,train_loss,test_mse,test_mae,bytes_up,bytes_down,"
    "bytes_down_synthetic";

struct MetricsRow {
  std::size_t round = 0;
  std::string method;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  double test_mse = 0.0;
  double test_mae = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_down_synthetic = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline std::string RunLabel(const RunResult& r) {
  std::string s = MethodName(r.method);
  const AblationFlags& f = r.ablation;
  if (UsesSynthetic(r.method) && (f.no_cu || f.no_dct || f.no_dgt)) {
    s += "[" + f.Label() + "]";
  }
  return s;
}

inline MetricsRow ToMetricsRow(const RunResult& run, const RoundReport& rep) {
  return {rep.round,     RunLabel(run),  run.seed,
          rep.mean_train_loss(), rep.test_mse, rep.test_mae,
          rep.bytes_up,  rep.bytes_down, rep.bytes_down_synthetic};
}

// Rows interleaved by round: for every round, one row per run in order.
inline void WriteMetricsCsv(std::ostream& out, const std::vector<const RunResult*>& runs) {
  out << kMetricsHeader << '\n';
  if (runs.empty()) return;
  const std::size_t rounds = runs[0]->reports.size();
  for (const RunResult* r : runs) {
    if (r->reports.size() != rounds) throw Error("runs have different round counts");
  }
  for (std::size_t i = 0; i < rounds; ++i) {
    for (const RunResult* r : runs) {
      const MetricsRow row = ToMetricsRow(*r, r->reports[i]);
      out << row.round << ',' << row.method << ',' << row.seed << ','
          << FormatDouble(row.train_loss) << ',' << FormatDouble(row.test_mse)
          << ',' << FormatDouble(row.test_mae) << ',' << row.bytes_up << ','
          << row.bytes_down << ',' << row.bytes_down_synthetic << '\n';
    }
  }
}

inline std::vector<MetricsRow> ReadMetricsCsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::Trim(line) != kMetricsHeader) {
    throw ParseError("metrics.csv: unexpected header", 1, 1);
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  auto num = [&](std::string_view s, std::size_t col) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ParseError("metrics.csv: bad number '" + std::string(s) + "'", lineno, col);
    }
    return v;
  };
  auto uint = [&](std::string_view s, std::size_t col) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ParseError("metrics.csv: bad integer '" + std::string(s) + "'", lineno, col);
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::Trim(line).empty()) continue;
    const auto f = detail::SplitCsvLine(line);
    if (f.size() != 9) {
      throw ParseError("metrics.csv: expected 9 fields, got " + std::to_string(f.size()),
                       lineno, 1);
    }
    rows.push_back({uint(f[0], 1), std::string(f[1]), uint(f[2], 3), num(f[3], 4),
                    num(f[4], 5), num(f[5], 6), uint(f[6], 7), uint(f[7], 8),
                    uint(f[8], 9)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// model.bin
//
//   "TSFEDPV1"                       8 bytes
//   u32 view count
//   per view: u32 name length, name bytes, u32 rank, u64 dims[rank], u64 offset
//   u64 value count, then that many f64
//
// All integers and floats little-endian.

inline constexpr char kModelMagic[8] = {'T', 'S', 'F', 'E', 'D', 'P', 'V', '1'};

namespace detail {

template <typename T>
void PutLe(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T GetLe(std::istream& in, const char* what) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) {
    throw ParseError(std::string("model.bin: truncated while reading ") + what, 0, 0);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline void WriteModel(std::ostream& out, const ParamVector& p) {
  out.write(kModelMagic, sizeof(kModelMagic));
  detail::PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(p.layout().size()));
  for (const auto& v : p.layout()) {
    detail::PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(v.name.size()));
    out.write(v.name.data(), static_cast<std::streamsize>(v.name.size()));
    detail::PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(v.shape.size()));
    for (auto d : v.shape) detail::PutLe<std::uint64_t>(out, d);
    detail::PutLe<std::uint64_t>(out, v.offset);
  }
  detail::PutLe<std::uint64_t>(out, p.size());
  for (double x : p.flat().vec()) detail::PutLe<double>(out, x);
}

inline ParamVector ReadModel(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw ParseError("model.bin: bad magic", 0, 0);
  }
  const auto nviews = detail::GetLe<std::uint32_t>(in, "view count");
  if (nviews > 4096) throw ParseError("model.bin: implausible view count", 0, 0);
  ParamLayout layout;
  for (std::uint32_t i = 0; i < nviews; ++i) {
    ParamView v;
    const auto len = detail::GetLe<std::uint32_t>(in, "name length");
    if (len > 4096) throw ParseError("model.bin: implausible name length", 0, 0);
    v.name.resize(len);
    if (!in.read(v.name.data(), len)) throw ParseError("model.bin: truncated name", 0, 0);
    const auto rank = detail::GetLe<std::uint32_t>(in, "rank");
    if (rank < 1 || rank > 8) throw ParseError("model.bin: bad rank", 0, 0);
    for (std::uint32_t r = 0; r < rank; ++r) {
      v.shape.push_back(detail::GetLe<std::uint64_t>(in, "dimension"));
    }
    v.offset = detail::GetLe<std::uint64_t>(in, "offset");
    layout.push_back(std::move(v));
  }
  const auto count = detail::GetLe<std::uint64_t>(in, "value count");
  if (count != LayoutSize(layout)) {
    throw ParseError("model.bin: value count does not match the layout", 0, 0);
  }
  std::vector<double> values(count);
  for (auto& x : values) x = detail::GetLe<double>(in, "values");
  return ParamVector(std::move(layout), Tensor({count}, std::move(values)));
}

// ---------------------------------------------------------------------------
// Synthetic dataset dump: comment header, then one window per row.
//
//   # provenance=ct
//   # build_round=80
//   x0,...,x{Lx-1},y0,...,y{Ly-1}

inline void WriteSyntheticCsv(std::ostream& out, const SyntheticDataset& ds) {
  out << "# provenance=" << ProvenanceTag(ds.provenance) << '\n';
  out << "# build_round=" << ds.build_round << '\n';
  for (std::size_t j = 0; j < ds.input_len(); ++j) out << (j ? "," : "") << 'x' << j;
  for (std::size_t j = 0; j < ds.output_len(); ++j) out << ",y" << j;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.input_len(); ++j) {
      out << (j ? "," : "") << FormatDouble(ds.x.at(i, j));
    }
    for (std::size_t j = 0; j < ds.output_len(); ++j) {
      out << ',' << FormatDouble(ds.y.at(i, j));
    }
    out << '\n';
  }
}

inline SyntheticDataset ReadSyntheticCsv(std::istream& in) {
  SyntheticDataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_prov = false, have_round = false;
  std::size_t lx = 0, ly = 0;
  // Comment header.
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view t = detail::Trim(line);
    if (t.empty()) continue;
    if (t.front() != '#') break;
    const std::string_view body = detail::Trim(t.substr(1));
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string key(detail::Trim(body.substr(0, eq)));
    const std::string val(detail::Trim(body.substr(eq + 1)));
    if (key == "provenance") {
      ds.provenance = ParseProvenance(val);
      have_prov = true;
    } else if (key == "build_round") {
      const auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), ds.build_round);
      if (ec != std::errc() || p != val.data() + val.size()) {
        throw ParseError("synthetic csv: bad build_round '" + val + "'", lineno, 1);
      }
      have_round = true;
    }
  }
  if (!have_prov || !have_round) {
    throw ParseError("synthetic csv: missing provenance/build_round header", lineno, 1);
  }
  // Column header.
  for (auto name : detail::SplitCsvLine(line)) {
    if (!name.empty() && name[0] == 'x') ++lx;
    else if (!name.empty() && name[0] == 'y') ++ly;
    else throw ParseError("synthetic csv: unexpected column '" + std::string(name) + "'", lineno, 1);
  }
  if (lx == 0 || ly == 0) throw ParseError("synthetic csv: need x and y columns", lineno, 1);
  std::vector<double> xs, ys;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::Trim(line).empty()) continue;
    const auto f = detail::SplitCsvLine(line);
    if (f.size() != lx + ly) {
      throw ParseError("synthetic csv: expected " + std::to_string(lx + ly) + " fields", lineno, 1);
    }
    for (std::size_t c = 0; c < f.size(); ++c) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(f[c].data(), f[c].data() + f[c].size(), v);
      if (ec != std::errc() || p != f[c].data() + f[c].size()) {
        throw ParseError("synthetic csv: bad number '" + std::string(f[c]) + "'", lineno, c + 1);
      }
      (c < lx ? xs : ys).push_back(v);
    }
  }
  const std::size_t n = xs.size() / lx;
  if (n == 0) throw ParseError("synthetic csv: no rows", lineno, 1);
  ds.x = Tensor({n, lx}, std::move(xs));
  ds.y = Tensor({n, ly}, std::move(ys));
  return ds;
}

// ---------------------------------------------------------------------------
// traces.csv: long format, plot-ready (x = iteration, y = loss).

inline constexpr const char* kTracesHeader = "provenance,build_round,iteration,loss";

inline void WriteTracesCsv(std::ostream& out, const std::vector<BuildRecord>& builds) {
  out << kTracesHeader << '\n';
  for (const auto& b : builds) {
    for (std::size_t i = 0; i < b.trace.size(); ++i) {
      out << ProvenanceTag(b.provenance) << ',' << b.round << ',' << i << ','
          << FormatDouble(b.trace[i]) << '\n';
    }
  }
}

inline std::vector<BuildRecord> ReadTracesCsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::Trim(line) != kTracesHeader) {
    throw ParseError("traces.csv: unexpected header", 1, 1);
  }
  std::vector<BuildRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::Trim(line).empty()) continue;
    const auto f = detail::SplitCsvLine(line);
    if (f.size() != 4) throw ParseError("traces.csv: expected 4 fields", lineno, 1);
    const Provenance prov = ParseProvenance(std::string(f[0]));
    std::size_t round = 0, it = 0;
    double loss = 0.0;
    auto bad = [&](std::size_t col) {
      return ParseError("traces.csv: bad field '" + std::string(f[col - 1]) + "'", lineno, col);
    };
    if (std::from_chars(f[1].data(), f[1].data() + f[1].size(), round).ec != std::errc()) throw bad(2);
    if (std::from_chars(f[2].data(), f[2].data() + f[2].size(), it).ec != std::errc()) throw bad(3);
    if (std::from_chars(f[3].data(), f[3].data() + f[3].size(), loss).ec != std::errc()) throw bad(4);
    if (out.empty() || out.back().provenance != prov || out.back().round != round) {
      BuildRecord rec;
      rec.provenance = prov;
      rec.round = round;
      rec.ok = true;
      out.push_back(std::move(rec));
    }
    if (it != out.back().trace.size()) {
      throw ParseError("traces.csv: iterations out of order", lineno, 3);
    }
    out.back().trace.push_back(loss);
  }
  return out;
}

// ---------------------------------------------------------------------------
// result.json

inline nlohmann::json RunSummary(const RunResult& r) {
  nlohmann::json j;
  j["method"] = RunLabel(r);
  j["seed"] = r.seed;
  j["rounds"] = r.reports.size();
  j["clients"] = r.num_clients;
  j["final_mse"] = r.final_metrics.mse;
  j["final_mae"] = r.final_metrics.mae;
  j["num_params"] = r.final_params.size();
  std::uint64_t up = 0, down = 0;
  for (const auto& rep : r.reports) {
    up += rep.bytes_up;
    down += rep.bytes_down;
  }
  j["bytes_up_total"] = up;
  j["bytes_down_total"] = down;
  j["bytes_down_synthetic_total"] = r.synthetic_bytes_down();
  j["wall_seconds"] = r.wall_seconds;
  nlohmann::json builds = nlohmann::json::array();
  for (const auto& b : r.builds) {
    nlohmann::json e;
    e["provenance"] = ProvenanceTag(b.provenance);
    e["round"] = b.round;
    e["segments"] = b.segments;
    e["ok"] = b.ok;
    if (!b.trace.empty()) {
      e["loss_first"] = b.trace.front();
      e["loss_last"] = b.trace.back();
    }
    builds.push_back(std::move(e));
  }
  j["builds"] = std::move(builds);
  return j;
}

}  // namespace tsfed

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

// Experiment configuration files.
//
// INI syntax: top-level keys, then [section] tables. Every key has a
// default, so an empty file runs the default setting. The same key table
// drives parsing, `--set section.key=value` overrides and the canonical
// snapshot written next to each run (parse(snapshot) reproduces the config
// exactly).

#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "tsfed/data.hpp"
#include "tsfed/error.hpp"
#include "tsfed/fedtrend.hpp"

namespace tsfed {

namespace config_detail {

inline double ToDouble(const std::string& key, std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

inline std::uint64_t ToUint(const std::string& key, std::string_view s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" +
                      std::string(s) + "'");
  }
  return v;
}

inline bool ToBool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline Range ToRange(const std::string& key, const std::string& s) {
  const auto parts = detail::SplitCsvLine(s);
  if (parts.size() != 2) {
    throw ConfigError(key + ": expected 'lo, hi', got '" + s + "'");
  }
  return {ToDouble(key, parts[0]), ToDouble(key, parts[1])};
}

struct Key {
  std::string name;  // "section.key" or "key" at top level
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define TSFED_NUM(path, field)                                              \
  Key{path, [](const ExperimentConfig& c) { return FormatDouble(c.field); }, \
      [](ExperimentConfig& c, const std::string& v) {                        \
        c.field = ToDouble(path, v);                                         \
      }}
#define TSFED_UINT(path, field)                                                \
  Key{path, [](const ExperimentConfig& c) { return std::to_string(c.field); }, \
      [](ExperimentConfig& c, const std::string& v) {                          \
        c.field = static_cast<decltype(c.field)>(ToUint(path, v));             \
      }}
#define TSFED_BOOL(path, field)                                  \
  Key{path,                                                      \
      [](const ExperimentConfig& c) {                            \
        return std::string(c.field ? "true" : "false");          \
      },                                                         \
      [](ExperimentConfig& c, const std::string& v) {            \
        c.field = ToBool(path, v);                               \
      }}
#define TSFED_RANGE(path, field)                                          \
  Key{path,                                                               \
      [](const ExperimentConfig& c) {                                     \
        return FormatDouble(c.field.lo) + ", " + FormatDouble(c.field.hi); \
      },                                                                  \
      [](ExperimentConfig& c, const std::string& v) {                     \
        c.field = ToRange(path, v);                                       \
      }}

inline const std::vector<Key>& Keys() {
  static const std::vector<Key> keys = {
      Key{"method", [](const ExperimentConfig& c) { return std::string(MethodName(c.method)); },
          [](ExperimentConfig& c, const std::string& v) { c.method = ParseMethod(v); }},
      Key{"method_b",
          [](const ExperimentConfig& c) {
            return c.method_b ? std::string(MethodName(*c.method_b)) : std::string();
          },
          [](ExperimentConfig& c, const std::string& v) {
            if (v.empty()) c.method_b.reset();
            else c.method_b = ParseMethod(v);
          }},
      TSFED_UINT("seed", seed),
      TSFED_UINT("rounds", rounds),
      TSFED_UINT("threads", threads),
      TSFED_NUM("participation", participation),

      TSFED_UINT("schedule.l_ct", l_ct),
      TSFED_UINT("schedule.l_gt", l_gt),

      Key{"model.kind", [](const ExperimentConfig& c) { return std::string(ModelKindName(c.model.kind)); },
          [](ExperimentConfig& c, const std::string& v) { c.model.kind = ParseModelKind(v); }},
      TSFED_UINT("model.input_len", model.input_len),
      TSFED_UINT("model.output_len", model.output_len),
      TSFED_UINT("model.kernel", model.kernel),
      Key{"model.hidden",
          [](const ExperimentConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < c.model.hidden.size(); ++i) {
              if (i > 0) s += ", ";
              s += std::to_string(c.model.hidden[i]);
            }
            return s;
          },
          [](ExperimentConfig& c, const std::string& v) {
            c.model.hidden.clear();
            for (auto part : detail::SplitCsvLine(v)) {
              c.model.hidden.push_back(ToUint("model.hidden", part));
            }
          }},

      TSFED_NUM("train.lr", train.lr),
      TSFED_NUM("train.momentum", train.momentum),
      TSFED_UINT("train.batch", train.batch),
      TSFED_UINT("train.local_epochs", train.local_epochs),

      TSFED_NUM("fedprox.mu", fedprox_mu),

      TSFED_NUM("ldp.lambda", ldp_lambda),
      Key{"ldp.distribution", [](const ExperimentConfig& c) { return std::string(NoiseKindName(c.ldp_kind)); },
          [](ExperimentConfig& c, const std::string& v) { c.ldp_kind = ParseNoiseKind(v); }},

      TSFED_UINT("refine.steps", refine_steps),
      TSFED_NUM("refine.lr", refine_lr),

      TSFED_UINT("ct.size", ct.size),
      TSFED_UINT("ct.iterations", ct.iterations),
      TSFED_NUM("ct.adam_lr", ct.adam_lr),
      TSFED_UINT("ct.inner_steps", ct.inner_steps),
      TSFED_NUM("ct.inner_lr", ct.inner_lr),

      TSFED_UINT("gt.size", gt.size),
      TSFED_UINT("gt.iterations", gt.iterations),
      TSFED_NUM("gt.adam_lr", gt.adam_lr),
      TSFED_UINT("gt.inner_steps", gt.inner_steps),
      TSFED_NUM("gt.inner_lr", gt.inner_lr),
      TSFED_UINT("gt.segment_len", gt.segment_len),

      TSFED_BOOL("ablation.no_cu", ablation.no_cu),
      TSFED_BOOL("ablation.no_dct", ablation.no_dct),
      TSFED_BOOL("ablation.no_dgt", ablation.no_dgt),

      Key{"data.source",
          [](const ExperimentConfig& c) {
            return std::string(c.data.source == DataSource::kCsv ? "csv" : "fleet");
          },
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "csv") c.data.source = DataSource::kCsv;
            else if (v == "fleet") c.data.source = DataSource::kFleet;
            else throw ConfigError("data.source: expected fleet or csv, got '" + v + "'");
          }},
      Key{"data.path", [](const ExperimentConfig& c) { return c.data.csv_path; },
          [](ExperimentConfig& c, const std::string& v) { c.data.csv_path = v; }},
      Key{"data.layout",
          [](const ExperimentConfig& c) {
            return std::string(c.data.csv_layout == CsvLayout::kColumnsAsClients
                                   ? "columns" : "single");
          },
          [](ExperimentConfig& c, const std::string& v) {
            c.data.csv_layout = ParseCsvLayout(v);
          }},
      TSFED_NUM("data.train_frac", data.train_frac),
      TSFED_UINT("data.stride", data.stride),

      TSFED_UINT("fleet.clients", data.fleet.num_clients),
      TSFED_UINT("fleet.length", data.fleet.series_length),
      TSFED_NUM("fleet.heterogeneity", data.fleet.heterogeneity),
      TSFED_NUM("fleet.noise_std", data.fleet.noise_std),
      TSFED_RANGE("fleet.amplitude", data.fleet.amplitude),
      TSFED_RANGE("fleet.frequency", data.fleet.frequency),
      TSFED_RANGE("fleet.phase", data.fleet.phase),
      TSFED_RANGE("fleet.slope", data.fleet.slope),
  };
  return keys;
}

#undef TSFED_NUM
#undef TSFED_UINT
#undef TSFED_BOOL
#undef TSFED_RANGE

inline const Key& FindKey(const std::string& name) {
  for (const auto& k : Keys()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace config_detail

// Applies one "key=value" assignment (dotted key).
inline void ApplyOverride(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key(detail::Trim(std::string_view(assignment).substr(0, eq)));
  const std::string value(detail::Trim(std::string_view(assignment).substr(eq + 1)));
  config_detail::FindKey(key).set(cfg, value);
}

// Keys absent from the text keep their defaults. Unknown keys are errors.
inline ExperimentConfig ParseConfig(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " +
                      e.message());
  }
  ExperimentConfig cfg;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      config_detail::FindKey(name).set(cfg, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) {
      config_detail::FindKey(name + "." + key).set(cfg, leaf.data());
    }
  }
  return cfg;
}

inline ExperimentConfig ParseConfigText(const std::string& text) {
  std::istringstream in(text);
  return ParseConfig(in);
}

inline ExperimentConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return ParseConfig(in);
}

// Every key, grouped by section, in table order. Doubles use the shortest
// representation that parses back to the same value.
inline std::string SerializeConfig(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : config_detail::Keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
    const std::string key = dot == std::string::npos ? k.name : k.name.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    const std::string value = k.get(cfg);
    out << key << " =" << (value.empty() ? "" : " ") << value << '\n';
  }
  return out.str();
}

}  // namespace tsfed

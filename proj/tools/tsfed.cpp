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

// tsfed: command-line driver.
//
//   tsfed run -c cfg.ini [--set key=value ...] [-o DIR]
//   tsfed gen-data -o fleet.csv [--seed N] [-c cfg.ini]
//   tsfed inspect-synth DIR
//   tsfed ablate -c cfg.ini [--seeds 1,2,3] [-o DIR]
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
// TSFED_LOG_LEVEL selects the log level (trace, debug, info, warn, error,
// off); logs go to stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tsfed/artifacts.hpp"
#include "tsfed/config.hpp"
#include "tsfed/fedtrend.hpp"

namespace fs = std::filesystem;
using namespace tsfed;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void SetupLogging() {
  auto logger = spdlog::stderr_color_mt("tsfed");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("TSFED_LOG_LEVEL")) {
    const auto lvl = spdlog::level::from_str(env);
    if (lvl == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("TSFED_LOG_LEVEL='{}' not recognised; using info", env);
    } else {
      spdlog::set_level(lvl);
    }
  }
}

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
};

void AddCommon(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "INI config file (defaults if omitted)");
  cmd->add_option("--set", o.overrides, "Override a key, e.g. --set ct.adam_lr=0.01")
      ->allow_extra_args(false);
}

ExperimentConfig LoadWithOverrides(const CommonOptions& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : LoadConfig(o.config_path);
  for (const auto& kv : o.overrides) ApplyOverride(cfg, kv);
  return cfg;
}

void WriteFile(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

template <typename Fn>
void WriteWith(const fs::path& path, Fn&& fn) {
  std::ostringstream s;
  fn(s);
  WriteFile(path, s.str());
}

void WriteTiming(const fs::path& path, const std::vector<const RunResult*>& runs) {
  WriteWith(path, [&](std::ostream& out) {
    out << "round,method,wall_seconds\n";
    for (const RunResult* r : runs) {
      for (const auto& rep : r->reports) {
        out << rep.round << ',' << RunLabel(*r) << ',' << FormatDouble(rep.wall_seconds) << '\n';
      }
    }
  });
}

// ---------------------------------------------------------------------------

int CmdRun(const CommonOptions& common, const std::string& out_dir) {
  ExperimentConfig cfg = LoadWithOverrides(common);
  cfg.Validate();
  const std::string snapshot = SerializeConfig(cfg);

  const Federation fed = BuildFederation(LoadSeries(cfg.data, cfg.seed), cfg.model,
                                         cfg.data.train_frac, cfg.data.stride, cfg.seed);
  spdlog::info("{} clients, {} parameters, method {}{}", fed.clients.size(),
               ParamCount(cfg.model), MethodName(cfg.method),
               cfg.method_b ? std::string(" vs ") + MethodName(*cfg.method_b) : "");

  std::vector<RunResult> results;
  results.push_back(RunExperiment(cfg, fed));
  if (cfg.method_b) {
    ExperimentConfig b = cfg;
    b.method = *cfg.method_b;
    results.push_back(RunExperiment(b, fed));
  }
  for (const auto& r : results) {
    spdlog::info("{}: final mse {:.6f} mae {:.6f} ({:.1f}s)", RunLabel(r),
                 r.final_metrics.mse, r.final_metrics.mae, r.wall_seconds);
  }

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  std::vector<const RunResult*> runs;
  for (const auto& r : results) runs.push_back(&r);
  WriteWith(dir / "metrics.csv", [&](std::ostream& o) { WriteMetricsCsv(o, runs); });
  WriteTiming(dir / "timing.csv", runs);
  WriteFile(dir / "config.ini", snapshot);
  WriteWith(dir / "model.bin", [&](std::ostream& o) { WriteModel(o, results[0].final_params); });
  if (results.size() > 1) {
    WriteWith(dir / "model_b.bin", [&](std::ostream& o) { WriteModel(o, results[1].final_params); });
  }
  // Synthetic artifacts come from the first run that built any.
  const RunResult& main = (results.size() > 1 && results[0].builds.empty()) ? results[1] : results[0];
  if (main.last_dct) {
    WriteWith(dir / "synthetic_ct.csv", [&](std::ostream& o) { WriteSyntheticCsv(o, *main.last_dct); });
  }
  if (main.last_dgt) {
    WriteWith(dir / "synthetic_gt.csv", [&](std::ostream& o) { WriteSyntheticCsv(o, *main.last_dgt); });
  }
  if (!main.builds.empty()) {
    WriteWith(dir / "traces.csv", [&](std::ostream& o) { WriteTracesCsv(o, main.builds); });
  }

  nlohmann::json j;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : results) j["runs"].push_back(RunSummary(r));
  j["config"] = snapshot;
  j["files"] = {{"metrics", "metrics.csv"}, {"timing", "timing.csv"},
                {"model", "model.bin"}, {"config", "config.ini"}};
  if (results.size() > 1) j["files"]["model_b"] = "model_b.bin";
  if (main.last_dct) j["files"]["synthetic_ct"] = "synthetic_ct.csv";
  if (main.last_dgt) j["files"]["synthetic_gt"] = "synthetic_gt.csv";
  if (!main.builds.empty()) j["files"]["traces"] = "traces.csv";
  WriteFile(dir / "result.json", j.dump(2) + "\n");
  spdlog::info("wrote {}", dir.string());
  return 0;
}

// ---------------------------------------------------------------------------

int CmdGenData(const CommonOptions& common, const std::string& out_path,
               std::optional<std::uint64_t> seed, std::optional<std::size_t> clients,
               std::optional<std::size_t> length, std::optional<double> heterogeneity) {
  ExperimentConfig cfg = LoadWithOverrides(common);
  if (seed) cfg.seed = *seed;
  if (clients) cfg.data.fleet.num_clients = *clients;
  if (length) cfg.data.fleet.series_length = *length;
  if (heterogeneity) cfg.data.fleet.heterogeneity = *heterogeneity;
  cfg.data.fleet.Validate();
  // Same derivation as a run with this seed, so the file reproduces its data.
  DataConfig data = cfg.data;
  data.source = DataSource::kFleet;
  const SeriesStore store = LoadSeries(data, cfg.seed);
  const fs::path path(out_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  WriteWith(path, [&](std::ostream& o) { WriteCsv(store, o); });
  spdlog::info("wrote {} clients x {} points to {}", store.size(),
               cfg.data.fleet.series_length, path.string());
  return 0;
}

// ---------------------------------------------------------------------------

int CmdInspectSynth(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::is_directory(dir)) {
    spdlog::error("'{}' is not a directory", run_dir);
    return kExitUsage;
  }
  const fs::path files[] = {dir / "synthetic_ct.csv", dir / "synthetic_gt.csv"};
  const fs::path traces = dir / "traces.csv";
  bool any = false;
  for (const auto& f : files) {
    if (!fs::exists(f)) continue;
    any = true;
    std::ifstream in(f);
    const SyntheticDataset ds = ReadSyntheticCsv(in);
    std::cout << "# dataset=" << ProvenanceTag(ds.provenance)
              << " build_round=" << ds.build_round << " pairs=" << ds.size() << '\n';
    std::cout << "pair";
    for (std::size_t j = 0; j < ds.input_len(); ++j) std::cout << ",x" << j;
    for (std::size_t j = 0; j < ds.output_len(); ++j) std::cout << ",y" << j;
    std::cout << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
      std::cout << i;
      for (std::size_t j = 0; j < ds.input_len(); ++j) std::cout << ',' << FormatDouble(ds.x.at(i, j));
      for (std::size_t j = 0; j < ds.output_len(); ++j) std::cout << ',' << FormatDouble(ds.y.at(i, j));
      std::cout << '\n';
    }
    std::cout << '\n';
  }
  if (fs::exists(traces)) {
    any = true;
    std::ifstream in(traces);
    const auto builds = ReadTracesCsv(in);
    std::cout << "# traces builds=" << builds.size() << '\n';
    WriteTracesCsv(std::cout, builds);
  }
  if (!any) {
    spdlog::error("'{}' holds no synthetic datasets or traces", run_dir);
    return kExitUsage;
  }
  return 0;
}

// ---------------------------------------------------------------------------

AblationFlags ParseFlags(const std::string& list) {
  AblationFlags f;
  for (auto tok : detail::SplitCsvLine(list)) {
    if (tok == "no-cu") f.no_cu = true;
    else if (tok == "no-dct") f.no_dct = true;
    else if (tok == "no-dgt") f.no_dgt = true;
    else if (!tok.empty()) {
      throw ConfigError("--flags: unknown flag '" + std::string(tok) +
                        "' (expected no-cu, no-dct, no-dgt)");
    }
  }
  return f;
}

int CmdAblate(const CommonOptions& common, const std::string& out_dir,
              const std::vector<std::uint64_t>& seeds_in,
              const std::optional<std::string>& flags) {
  ExperimentConfig cfg = LoadWithOverrides(common);
  if (!UsesSynthetic(cfg.method)) cfg.method = Method::kFedTrend;
  cfg.Validate();
  std::vector<AblationFlags> variants;
  if (flags) {
    variants.push_back(ParseFlags(*flags));
  } else {
    variants = {{}, {true, false, false}, {false, true, false},
                {false, false, true}, {true, true, true}};
  }
  const std::vector<std::uint64_t> seeds =
      seeds_in.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds_in;

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  std::ostringstream table;
  table << "variant,seed,final_mse,final_mae\n";
  std::vector<RunResult> all;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig c = cfg;
    c.seed = seed;
    const Federation fed = BuildFederation(LoadSeries(c.data, seed), c.model,
                                           c.data.train_frac, c.data.stride, seed);
    for (const auto& v : variants) {
      RunResult r = Ablate(c, v, fed);
      spdlog::info("seed {} {}: mse {:.6f}", seed, v.Label(), r.final_metrics.mse);
      table << v.Label() << ',' << seed << ',' << FormatDouble(r.final_metrics.mse)
            << ',' << FormatDouble(r.final_metrics.mae) << '\n';
      all.push_back(std::move(r));
    }
  }
  std::vector<const RunResult*> runs;
  for (const auto& r : all) runs.push_back(&r);
  WriteFile(dir / "ablation.csv", table.str());
  WriteWith(dir / "metrics.csv", [&](std::ostream& o) { WriteMetricsCsv(o, runs); });
  WriteFile(dir / "config.ini", SerializeConfig(cfg));
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  SetupLogging();
  CLI::App app{"Federated time-series forecasting simulator with trajectory-condensed synthetic data"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  std::string run_out = "run";
  std::string method, method_b;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::size_t> run_rounds, run_threads;
  auto* run = app.add_subcommand("run", "Run one experiment (or an A/B pair)");
  AddCommon(run, run_opts);
  run->add_option("-o,--out", run_out, "Output directory")->capture_default_str();
  run->add_option("--method", method, "Method: centralized, fedavg, fedprox, fedtrend, fedavg+ldp, fedtrend+ldp");
  run->add_option("--method-b", method_b, "Second method for a paired comparison");
  run->add_option("--seed", run_seed, "Master seed");
  run->add_option("--rounds", run_rounds, "Federated rounds");
  run->add_option("--threads", run_threads, "Client worker threads (0 = all cores)");

  CommonOptions gen_opts;
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_clients, gen_length;
  std::optional<double> gen_h;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic heterogeneous fleet as CSV");
  AddCommon(gen, gen_opts);
  gen->add_option("-o,--out", gen_out, "Output CSV path")->required();
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--clients", gen_clients, "Number of clients");
  gen->add_option("--length", gen_length, "Points per client");
  gen->add_option("--heterogeneity", gen_h, "Heterogeneity knob in [0, 1]");

  std::string inspect_dir;
  auto* inspect = app.add_subcommand("inspect-synth", "Dump synthetic datasets and build loss traces of a run");
  inspect->add_option("run_dir", inspect_dir, "Run output directory")->required();

  CommonOptions abl_opts;
  std::string abl_out = "ablation";
  std::vector<std::uint64_t> abl_seeds;
  std::optional<std::string> abl_flags;
  std::optional<std::size_t> abl_rounds, abl_threads;
  auto* abl = app.add_subcommand("ablate", "Run FedTrend with components removed");
  AddCommon(abl, abl_opts);
  abl->add_option("-o,--out", abl_out, "Output directory")->capture_default_str();
  abl->add_option("--seeds", abl_seeds, "Seeds to run")->delimiter(',');
  abl->add_option("--flags", abl_flags, "Comma list of no-cu, no-dct, no-dgt (default: standard table)");
  abl->add_option("--rounds", abl_rounds, "Federated rounds");
  abl->add_option("--threads", abl_threads, "Client worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*run) {
      if (!method.empty()) run_opts.overrides.push_back("method=" + method);
      if (!method_b.empty()) run_opts.overrides.push_back("method_b=" + method_b);
      if (run_seed) run_opts.overrides.push_back("seed=" + std::to_string(*run_seed));
      if (run_rounds) run_opts.overrides.push_back("rounds=" + std::to_string(*run_rounds));
      if (run_threads) run_opts.overrides.push_back("threads=" + std::to_string(*run_threads));
      return CmdRun(run_opts, run_out);
    }
    if (*gen) return CmdGenData(gen_opts, gen_out, gen_seed, gen_clients, gen_length, gen_h);
    if (*inspect) return CmdInspectSynth(inspect_dir);
    if (*abl) {
      if (abl_rounds) abl_opts.overrides.push_back("rounds=" + std::to_string(*abl_rounds));
      if (abl_threads) abl_opts.overrides.push_back("threads=" + std::to_string(*abl_threads));
      return CmdAblate(abl_opts, abl_out, abl_seeds, abl_flags);
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

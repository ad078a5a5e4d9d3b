//
// Copyright 2026 The fedscore Authors
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
//

#ifndef FEDSCORE_CLI_HPP_
#define FEDSCORE_CLI_HPP_

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedscore/config_io.hpp"
#include "fedscore/orchestrator.hpp"

namespace fedscore::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFault = 1;
inline constexpr int kExitConfig = 2;

// ---------------------------------------------------------------------------
// Experiment config files

inline Json ConfigToJson(const ExperimentConfig& c) {
  return {{"rounds", c.num_rounds},
          {"master_seed", c.master_seed},
          {"transport", std::string(ToString(c.transport))},
          {"schema_version", c.schema_version},
          {"test_set_size", c.test_set_size},
          {"calibration_size", c.calibration_size},
          {"session_ttl_rounds", c.session_ttl_rounds},
          {"global_patience", c.global_patience},
          {"barrier_timeout_ms", c.barrier_timeout_ms},
          {"seeds", c.ablation_seeds},
          {"aggregation", ToJson(c.aggregation)},
          {"privacy", ToJson(c.privacy)},
          {"training", ToJson(c.training)},
          {"scorer", ToJson(c.scorer)},
          {"data", ToJson(c.data)}};
}

// Missing keys keep their defaults; unknown keys are errors.
inline ExperimentConfig ConfigFromJson(const Json& j) {
  using internal::ReadOptional;
  internal::RequireKnownKeys(
      j, "config",
      {"rounds", "master_seed", "transport", "schema_version", "test_set_size",
       "calibration_size", "session_ttl_rounds", "global_patience",
       "barrier_timeout_ms", "seeds", "aggregation", "privacy", "training",
       "scorer", "data"});
  ExperimentConfig c;
  ReadOptional(j, "config", "rounds", c.num_rounds);
  ReadOptional(j, "config", "master_seed", c.master_seed);
  std::string transport(ToString(c.transport));
  ReadOptional(j, "config", "transport", transport);
  c.transport = ParseTransport(transport);
  ReadOptional(j, "config", "schema_version", c.schema_version);
  ReadOptional(j, "config", "test_set_size", c.test_set_size);
  ReadOptional(j, "config", "calibration_size", c.calibration_size);
  ReadOptional(j, "config", "session_ttl_rounds", c.session_ttl_rounds);
  ReadOptional(j, "config", "global_patience", c.global_patience);
  ReadOptional(j, "config", "barrier_timeout_ms", c.barrier_timeout_ms);
  ReadOptional(j, "config", "seeds", c.ablation_seeds);
  if (j.contains("aggregation")) {
    c.aggregation = AggregationConfigFromJson(j["aggregation"], c.aggregation);
  }
  if (j.contains("privacy")) c.privacy = PrivacyConfigFromJson(j["privacy"], c.privacy);
  if (j.contains("training")) {
    c.training = TrainingConfigFromJson(j["training"], c.training);
  }
  if (j.contains("scorer")) c.scorer = ScorerConfigFromJson(j["scorer"], c.scorer);
  if (j.contains("data")) c.data = ProfileFromJson(j["data"], c.data);
  return c;
}

// Built-in configs, usable wherever a config path is expected.
//   demo              small and quick
//   iid-benchmark     5 IID clients, 400 samples each, 30 rounds
//   hetero-benchmark  sizes 100..800, Dirichlet 0.5, clients 1 and 3 at
//                     40% label noise, 5 seeds
inline std::optional<ExperimentConfig> Preset(const std::string& name) {
  ExperimentConfig c;
  c.training.learning_rate = 0.05;
  c.data.margin = 0.1;
  c.master_seed = 7;
  if (name == "demo") {
    c.num_rounds = 20;
    c.training.learning_rate = 0.1;
    c.data.num_clients = 5;
    c.data.sizes.assign(5, 200);
    c.data.label_noise_rates.assign(5, 0.0);
    c.data.label_skew = 1.0;
    c.test_set_size = 500;
    c.calibration_size = 500;
    return c;
  }
  if (name == "iid-benchmark") {
    c.num_rounds = 30;
    c.data.num_clients = 5;
    c.data.sizes.assign(5, 400);
    c.data.label_noise_rates.assign(5, 0.0);
    return c;
  }
  if (name == "hetero-benchmark") {
    c.num_rounds = 30;
    c.data.num_clients = 5;
    c.data.sizes = {100, 275, 450, 625, 800};
    c.data.label_skew = 0.5;
    c.data.label_noise_rates = {0.0, 0.4, 0.0, 0.4, 0.0};
    c.ablation_seeds = {1, 2, 3, 4, 5};
    return c;
  }
  return std::nullopt;
}

// Reads a config file, or a preset when no such file exists.
inline ExperimentConfig LoadConfig(const std::string& path_or_preset) {
  if (!fs::exists(path_or_preset)) {
    if (auto preset = Preset(path_or_preset)) return *preset;
    throw ConfigError("no config file or preset named '" + path_or_preset + "'");
  }
  std::ifstream in(path_or_preset);
  if (!in) throw ConfigError("cannot read " + path_or_preset);
  const Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path_or_preset + ": not valid JSON");
  return ConfigFromJson(j);
}

struct Overrides {
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> clients;
  std::optional<std::string> aggregator;
  std::optional<double> dp_epsilon;
  std::optional<double> dp_delta;
  std::optional<double> clip_norm;
  std::optional<double> gamma;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> transport;
};

namespace internal {

// Truncates, or pads by repeating the last entry.
template <typename T>
void Resize(std::vector<T>& v, std::size_t n, T fill) {
  if (!v.empty()) fill = v.back();
  v.resize(n, fill);
}

}  // namespace internal

// Any privacy flag switches the mechanism on.
inline void ApplyOverrides(ExperimentConfig& c, const Overrides& o) {
  if (o.rounds) c.num_rounds = *o.rounds;
  if (o.clients) {
    c.data.num_clients = *o.clients;
    internal::Resize<std::size_t>(c.data.sizes, *o.clients, 200);
    internal::Resize<double>(c.data.label_noise_rates, *o.clients, 0.0);
  }
  if (o.aggregator) c.aggregation.strategy = ParseStrategy(*o.aggregator);
  if (o.dp_epsilon) c.privacy.epsilon = *o.dp_epsilon;
  if (o.dp_delta) c.privacy.delta = *o.dp_delta;
  if (o.clip_norm) c.privacy.clip_norm = *o.clip_norm;
  if (o.dp_epsilon || o.dp_delta || o.clip_norm) c.privacy.enabled = true;
  if (o.gamma) c.aggregation.momentum = *o.gamma;
  if (o.seed) c.master_seed = *o.seed;
  if (o.transport) c.transport = ParseTransport(*o.transport);
}

// Config load, overrides and validation; every failure is a ConfigError.
inline ExperimentConfig ResolveConfig(const std::string& path, const Overrides& o) {
  try {
    ExperimentConfig c = LoadConfig(path);
    ApplyOverrides(c, o);
    c.Validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// Depends only on the resolved config (seed included).
inline std::string RunId(const ExperimentConfig& c) {
  const std::string text =
      ConfigToJson(c).dump() + "\nseed=" + std::to_string(c.master_seed);
  return crypto::ToHex(crypto::Sha256(crypto::AsBytes(text))).substr(0, 16);
}

// ---------------------------------------------------------------------------
// Output files

inline constexpr const char* kMetricsHeader =
    "round,strategy,accuracy,precision,recall,f1,rubric_match,mae,"
    "global_objective,epsilon_spent";

inline std::string FormatNumber(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline void WriteMetricsCsv(std::ostream& os, AggregationStrategy strategy,
                            std::span<const RoundRecord> history) {
  os << kMetricsHeader << '\n';
  for (const RoundRecord& r : history) {
    const MetricReport& m = r.eval_metrics;
    os << r.round << ',' << ToString(strategy) << ',' << FormatNumber(m.accuracy)
       << ',' << FormatNumber(m.precision) << ',' << FormatNumber(m.recall) << ','
       << FormatNumber(m.f1) << ',' << FormatNumber(m.rubric_match) << ','
       << FormatNumber(m.mae) << ',' << FormatNumber(r.global_objective) << ','
       << FormatNumber(r.epsilon_spent) << '\n';
  }
}

inline void WriteFile(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  out << contents;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

struct RunOutputs {
  std::string run_id;
  const ExperimentConfig* config;
  const ExperimentResult* result;
  const CentralizedResult* centralized = nullptr;
};

inline void WriteRunOutputs(const fs::path& dir, const RunOutputs& o) {
  fs::create_directories(dir);
  std::ostringstream csv;
  WriteMetricsCsv(csv, o.config->aggregation.strategy, o.result->history);
  WriteFile(dir / "metrics.csv", csv.str());

  std::ostringstream history;
  WriteRoundHistory(history, o.result->history);
  WriteFile(dir / "history.jsonl", history.str());

  Json summary = {
      {"run_id", o.run_id},
      {"config", ConfigToJson(*o.config)},
      {"rounds_completed", o.result->history.size()},
      {"final_metrics", MetricsToJson(o.result->final_metrics)},
      {"final_params_sha256", ParamsHash(o.result->final_params)},
      {"epsilon_spent",
       o.result->history.empty() ? 0.0 : o.result->history.back().epsilon_spent}};
  if (o.centralized != nullptr) {
    summary["centralized_metrics"] = MetricsToJson(o.centralized->metrics);
  }
  WriteFile(dir / "summary.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands

inline int CmdRun(const ExperimentConfig& cfg, const fs::path& out, bool baseline) {
  const ExperimentResult result = RunExperimentDetailed(cfg);
  std::optional<CentralizedResult> central;
  if (baseline) central = RunCentralizedBaselineDetailed(cfg);
  WriteRunOutputs(out, {RunId(cfg), &cfg, &result, central ? &*central : nullptr});
  std::cout << "run " << RunId(cfg) << ": " << result.history.size()
            << " rounds, accuracy " << FormatNumber(result.final_metrics.accuracy);
  if (central) std::cout << " (centralized " << FormatNumber(central->metrics.accuracy) << ")";
  std::cout << "\nwrote " << (out / "metrics.csv").string() << '\n';
  return kExitOk;
}

struct AblationRow {
  AggregationStrategy strategy;
  std::size_t runs = 0;
  MetricReport mean;
};

inline std::vector<AblationRow> RunAblation(const ExperimentConfig& base,
                                            std::ostream* per_run = nullptr) {
  const std::vector<std::uint64_t> seeds =
      base.ablation_seeds.empty() ? std::vector<std::uint64_t>{base.master_seed}
                                  : base.ablation_seeds;
  std::vector<AblationRow> rows;
  if (per_run) *per_run << "strategy,seed,accuracy,precision,recall,f1,rubric_match,mae\n";
  for (AggregationStrategy s :
       {AggregationStrategy::kAdaptive, AggregationStrategy::kPlainAverage,
        AggregationStrategy::kSampleWeighted}) {
    AblationRow row{s, 0, {}};
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.aggregation.strategy = s;
      cfg.master_seed = seed;
      const MetricReport m = RunExperimentDetailed(cfg).final_metrics;
      if (per_run) {
        *per_run << ToString(s) << ',' << seed << ',' << FormatNumber(m.accuracy)
                 << ',' << FormatNumber(m.precision) << ',' << FormatNumber(m.recall)
                 << ',' << FormatNumber(m.f1) << ',' << FormatNumber(m.rubric_match)
                 << ',' << FormatNumber(m.mae) << '\n';
      }
      row.mean.accuracy += m.accuracy;
      row.mean.precision += m.precision;
      row.mean.recall += m.recall;
      row.mean.f1 += m.f1;
      row.mean.rubric_match += m.rubric_match;
      row.mean.mae += m.mae;
      ++row.runs;
    }
    const double n = static_cast<double>(row.runs);
    row.mean = {row.mean.accuracy / n, row.mean.precision / n, row.mean.recall / n,
                row.mean.f1 / n,       row.mean.rubric_match / n, row.mean.mae / n};
    rows.push_back(row);
  }
  return rows;
}

inline int CmdAblation(const ExperimentConfig& cfg, const fs::path& out) {
  std::ostringstream runs;
  const std::vector<AblationRow> rows = RunAblation(cfg, &runs);
  std::ostringstream table;
  table << "strategy,runs,accuracy,precision,recall,f1,rubric_match,mae\n";
  for (const AblationRow& r : rows) {
    table << ToString(r.strategy) << ',' << r.runs << ','
          << FormatNumber(r.mean.accuracy) << ',' << FormatNumber(r.mean.precision)
          << ',' << FormatNumber(r.mean.recall) << ',' << FormatNumber(r.mean.f1)
          << ',' << FormatNumber(r.mean.rubric_match) << ','
          << FormatNumber(r.mean.mae) << '\n';
  }
  fs::create_directories(out);
  WriteFile(out / "ablation.csv", table.str());
  WriteFile(out / "ablation_runs.csv", runs.str());
  std::cout << table.str();
  return kExitOk;
}

inline int CmdServe(const ExperimentConfig& cfg, const fs::path& out,
                    const std::string& registry_path, const std::string& listen,
                    const std::string& audit_path) {
  std::ifstream reg(registry_path);
  if (!reg) throw ConfigError("cannot read token registry " + registry_path);
  protocol::TokenRegistry registry = protocol::ReadTokenRegistry(reg);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < cfg.data.num_clients; ++i) {
    ids.push_back(ClientIdFor(i));
    if (!registry.contains(ids.back())) {
      throw ConfigError("token registry has no entry for " + ids.back());
    }
  }
  transport::Endpoint endpoint;
  try {
    endpoint = transport::ParseEndpoint(listen);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  std::optional<protocol::AuditLog> audit;
  if (audit_path.empty()) {
    audit.emplace();
  } else {
    audit.emplace(audit_path);
  }
  transport::Listener listener(endpoint);
  std::cout << "listening on " << listener.endpoint().host << ':'
            << listener.endpoint().port << std::endl;

  const SharedSetup setup = MakeSharedSetup(cfg);
  protocol::Authenticator auth(std::move(registry), cfg.schema_version, *audit,
                               cfg.session_ttl_rounds);
  Coordinator coordinator(cfg, setup, &*audit);
  {
    SocketCohort cohort(listener, auth, ids, cfg.barrier_timeout());
    if (cfg.num_rounds > 0) {
      cohort.Admit(1);
      coordinator.Run(cohort);
    }
  }
  const ExperimentResult result{
      coordinator.history(), coordinator.global_params(),
      EvaluateScorer(coordinator.global_model(), coordinator.test_set())};
  WriteRunOutputs(out, {RunId(cfg), &cfg, &result, nullptr});
  std::cout << "served " << result.history.size() << " rounds, accuracy "
            << FormatNumber(result.final_metrics.accuracy) << '\n';
  return kExitOk;
}

inline int CmdClient(const ExperimentConfig& cfg, const std::string& id,
                     const std::string& token, const std::string& connect,
                     bool private_noise) {
  const std::optional<std::size_t> index = ClientIndexOf(id);
  if (!index || *index >= cfg.data.num_clients) {
    throw ConfigError("client id must be client-<index> with index < " +
                      std::to_string(cfg.data.num_clients));
  }
  transport::Endpoint endpoint;
  try {
    endpoint = transport::ParseEndpoint(connect);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const SharedSetup setup = MakeSharedSetup(cfg);
  const ClientNode node(cfg, setup, *index, private_noise);
  const std::size_t completed =
      RunSocketClient(node, cfg.schema_version,
                      {endpoint, token, cfg.barrier_timeout(),
                       std::chrono::milliseconds(-1)});
  // Round-level stopping lets the server end early.
  const bool done = cfg.global_patience > 0 ? completed > 0 || cfg.num_rounds == 0
                                            : completed == cfg.num_rounds;
  std::cout << id << ": completed " << completed << " of " << cfg.num_rounds
            << " rounds\n";
  if (!done) {
    std::cerr << "error: server closed the session early\n";
    return kExitFault;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline void AddOverrideFlags(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--rounds", o.rounds, "Number of federated rounds");
  cmd.add_option("--clients", o.clients, "Number of clients");
  cmd.add_option("--aggregator", o.aggregator,
                 "adaptive, plain_average or sample_weighted");
  cmd.add_option("--dp-epsilon", o.dp_epsilon, "Per-round epsilon (enables DP)");
  cmd.add_option("--dp-delta", o.dp_delta, "Per-round delta (enables DP)");
  cmd.add_option("--clip-norm", o.clip_norm, "Update clip norm (enables DP)");
  cmd.add_option("--gamma", o.gamma, "Server step size in (0, 1]");
  cmd.add_option("--seed", o.seed, "Master seed");
  cmd.add_option("--transport", o.transport, "in_process or socket");
}

inline int Main(int argc, char** argv) {
  CLI::App app{"Federated automated scoring experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "fedscore-out";
  Overrides overrides;
  bool baseline = false;
  std::string registry_path, listen = "127.0.0.1:7700", audit_path;
  std::string client_id, token, connect = "127.0.0.1:7700";
  bool private_noise = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "Config file, or demo / iid-benchmark / hetero-benchmark")
        ->required();
    AddOverrideFlags(*cmd, overrides);
  };

  CLI::App* run = app.add_subcommand("run", "Run one federated experiment");
  add_common(run);
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--baseline", baseline, "Also train the centralized baseline");

  CLI::App* ablation = app.add_subcommand(
      "ablation", "Compare aggregation strategies on the same data and seeds");
  add_common(ablation);
  ablation->add_option("--out", out_dir, "Output directory");

  CLI::App* serve = app.add_subcommand("serve", "Coordinate rounds over TCP");
  add_common(serve);
  serve->add_option("--out", out_dir, "Output directory");
  serve->add_option("--registry", registry_path, "Token registry file")->required();
  serve->add_option("--listen", listen, "host:port to listen on");
  serve->add_option("--audit", audit_path, "Append audit events to this file");

  CLI::App* client = app.add_subcommand("client", "Join a served run");
  add_common(client);
  client->add_option("--id", client_id, "Client id, client-<index>")->required();
  client->add_option("--token", token, "Pre-shared token")->required();
  client->add_option("--connect", connect, "Server host:port");
  client->add_flag("--private-noise", private_noise,
                   "Draw privacy noise from the OS instead of the master seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  ExperimentConfig cfg;
  try {
    cfg = ResolveConfig(config_path, overrides);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (run->parsed()) return CmdRun(cfg, out_dir, baseline);
    if (ablation->parsed()) return CmdAblation(cfg, out_dir);
    if (serve->parsed()) {
      return CmdServe(cfg, out_dir, registry_path, listen, audit_path);
    }
    return CmdClient(cfg, client_id, token, connect, private_noise);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFault;
  }
}

}  // namespace fedscore::cli

#endif  // FEDSCORE_CLI_HPP_

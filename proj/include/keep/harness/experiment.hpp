#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "keep/data/generator.hpp"
#include "keep/data/training_order.hpp"
#include "keep/extractor/model.hpp"
#include "keep/harness/gauc.hpp"
#include "keep/kv.hpp"
#include "keep/plug/downstream.hpp"

namespace keep::harness {

// Generator fields from `<prefix>n_users`, `<prefix>super_rate`, ... keys.
data::GeneratorConfig parse_generator(const KeyValues& kv, const std::string& prefix);

// Arm names used in configs and reports.
//   base, sample_merging, keep, keep_c           cross-domain / pre-training
//   keep_decomposed, keep_degenerated,
//   keep_decomp_degen                            serving strategies
//   keep[u], keep[u+i]                           knowledge ablations
//   keep{click}, keep{click+conversion}          pre-training task ablations
struct ExperimentConfig {
  // Logs are read from files when both paths are set, otherwise generated.
  std::string super_log_path;
  std::string sub_log_path;
  data::GeneratorConfig generator;

  data::DayRange pretrain_days{0, 4};
  data::DayRange train_days{5, 6};
  std::int32_t test_day = 7;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  std::vector<std::string> modes = {"base",            "sample_merging",   "keep",
                                    "keep_c",          "keep_decomposed",  "keep_degenerated",
                                    "keep_decomp_degen"};
  // Each entry is a '+'-joined subset of {u, i, ui}.
  std::vector<std::string> knowledge_ablations = {"u", "u+i"};
  // Each entry is a '+'-joined subset of {click, conversion, cart}.
  std::vector<std::string> task_ablations = {"click", "click+conversion"};

  extractor::ExtractorConfig extractor;
  std::size_t pretrain_batch = 256;
  double alpha = 0.25;
  std::size_t triplet_cap = 3;
  double extractor_lr = 0.001;

  // Plugs into h_1: a user-only term added right before the linear logit
  // would be a per-user constant and could not change within-user ranking.
  plug::DownstreamConfig downstream = [] {
    plug::DownstreamConfig d;
    d.plug_layer = 1;
    return d;
  }();
  std::size_t downstream_batch = 64;
  double downstream_lr = 0.001;

  std::size_t two_tower_hidden = 32;
  std::size_t two_tower_dim = 16;
  std::size_t two_tower_batch = 256;

  std::size_t max_behaviors = 20;

  // "local" serves snapshots from an in-process store; "gkc:host:port"
  // publishes them to a running service and looks knowledge up over TCP.
  std::string knowledge = "local";
  std::string snapshot_dir;  // required for a remote service
  std::uint32_t version_base = 1;

  std::string report_dir;  // text + JSON reports when set
  std::size_t threads = 1;  // seeds run in parallel, each single-threaded
  bool checks = true;
  double min_keep_gain = 0.005;
  double max_runtime_seconds = 900.0;

  // Unknown keys and a test day inside the train window throw ConfigError.
  static ExperimentConfig from_kv(const KeyValues& kv);
  void validate() const;
  // Every arm the config asks for, in report order.
  std::vector<std::string> arms() const;
};

struct ArmSeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  GaucReport report;
  double seconds = 0.0;
};

struct ArmResult {
  std::string name;
  std::vector<ArmSeedResult> runs;  // one per seed, config order

  std::size_t ok_runs() const;
  double mean() const;  // over successful runs; NaN when none
  double stddev() const;
  double group_mean(std::size_t g) const;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentResult {
  std::vector<ArmResult> arms;
  std::vector<CheckResult> checks;
  double seconds = 0.0;
  std::vector<std::string> notes;  // per-seed pre-training summaries

  const ArmResult* find(const std::string& name) const;
  bool all_checks_passed() const;
};

// Progress lines go to `progress` when given.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* progress = nullptr);

// Aligned plain-text tables: cross-domain / pre-training, knowledge and task
// ablations, user groups, serving strategies, then checks.
std::string render_report(const ExperimentConfig& config, const ExperimentResult& result);
std::string render_json(const ExperimentConfig& config, const ExperimentResult& result);

}  // namespace keep::harness

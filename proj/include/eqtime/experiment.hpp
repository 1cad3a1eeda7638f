#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eqtime/data.hpp"
#include "eqtime/model.hpp"
#include "eqtime/synthetic.hpp"
#include "eqtime/train.hpp"

namespace eqtime {

const char* version();

struct PipelineConfig {
  double tau = 1.0;
  std::size_t max_steps = 30;   // T_max, 0 for no limit
  std::size_t max_events = 6;   // N_max, 0 for no limit
  std::uint64_t split_seed = 1;
  SplitFractions fractions;
  double transition_alpha = 0.1;
};

enum class Twin { kBinned, kOrdered };

/// One experiment: data source, pipeline, model, optimiser and seeds.
struct ExperimentConfig {
  std::filesystem::path dataset;            // JSONL file; empty when `synthetic` is set
  std::optional<SyntheticConfig> synthetic;
  Twin twin = Twin::kBinned;                // which synthetic twin to train and evaluate on
  PipelineConfig pipeline;
  ModelSpec model;
  bool embed_types = false;                 // "type_embedding": "vocab"
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path output = "eqtime-out";

  /// Relative paths resolve against `base_dir`. Unknown keys raise ConfigError.
  static ExperimentConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;
  /// Canonical JSON of every effective setting.
  std::string canonical() const;
  std::string hash() const;

  std::filesystem::path data_dir(Twin which) const;
  std::filesystem::path data_dir() const { return data_dir(twin); }
  std::filesystem::path transition_path() const { return output / "transition.json"; }
  std::filesystem::path runs_dir() const { return output / "runs"; }
  std::filesystem::path reports_dir() const { return output / "reports"; }
};

/// A plain-text table and its machine-readable twin, both deterministic.
struct Report {
  std::string text;
  std::string jsonl;
  void write(const std::filesystem::path& stem) const;
};

struct PrepareSummary {
  std::map<std::string, std::size_t> split_sizes;
  std::map<std::size_t, std::size_t> histogram;  // of the selected twin, all splits
  double mean_events_per_step = 0.0;
  bool transition_written = false;
  Report report;
};

/// Bins (or generates) the data, derives labels, splits, and writes
/// `<output>/data/<twin>/{train,validation,test}.jsonl` plus reports.
PrepareSummary prepare(const ExperimentConfig& config, bool emit_transition);

/// The prepared split of the configured twin.
DatasetSplit load_prepared(const ExperimentConfig& config);

struct TrainSummary {
  std::vector<RunResult> runs;
  Report report;
};

/// Trains `config.model` once per seed; writes checkpoints and run metrics
/// under `<output>/runs/<model>/` and an aggregate report.
TrainSummary train_experiment(const ExperimentConfig& config, std::ostream& log);

struct EvalOptions {
  bool ensemble = false;
  std::optional<std::pair<std::string, std::string>> compare;
};

struct EvalSummary {
  std::map<std::string, std::vector<double>> metrics;  // model name -> per-checkpoint test metric
  std::optional<double> ensemble_metric;
  std::optional<RunComparison> comparison;
  Report report;
};

/// Scores every checkpoint below `checkpoints` on the prepared test split.
EvalSummary evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoints, const EvalOptions& options);

}  // namespace eqtime

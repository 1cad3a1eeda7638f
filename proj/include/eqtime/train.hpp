#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "eqtime/data.hpp"
#include "eqtime/metrics.hpp"
#include "eqtime/model.hpp"

namespace eqtime {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 20;
  std::size_t patience = 5;
  std::size_t batch_size = 32;
  double clip_norm = 5.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  double decision_threshold = 0.5;

  void validate() const;
};

struct RunResult {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::size_t best_epoch = 0;
  std::string metric;  // "f1" or "perplexity"
  double test_metric = 0.0;
  double wall_seconds = 0.0;

  /// Equality of everything except wall-clock time.
  bool same_outcome(const RunResult& other) const;
};

/// Adaptive-moment optimiser over the trainable parameters of a store.
class Adam {
 public:
  Adam(const TrainConfig& config, const ParameterStore& params);
  /// Clips the global gradient norm, then applies one update. Returns the pre-clip norm.
  double step(ParameterStore& params);

 private:
  TrainConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

/// Serialisable snapshot of a trained model.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  ModelSpec spec;
  TypeVocab vocab;
  std::vector<std::pair<std::string, Tensor>> params;
  std::shared_ptr<const TransitionMatrix> transition;
  std::map<std::string, double> metrics;

  static Checkpoint capture(const Model& model, const TypeVocab& vocab, std::map<std::string, double> metrics = {});
  Model restore() const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Flattened predictions over a list of batches.
struct Predictions {
  TaskKind task = TaskKind::kMultilabel;
  Tensor probs;             // [n, C] or [rows, V]
  Tensor labels;            // [n, C], multilabel only
  std::vector<int> tokens;  // next-token targets per row
  Mask live;                // next-token live rows
};

Predictions collect_predictions(const Model& model, std::span<const Batch> batches);
/// F1 macro for multilabel, perplexity for next-token.
double score(const Predictions& predictions, double threshold = 0.5);
/// Mean of predicted probabilities across models on one batch.
Tensor ensemble_predict(std::span<const Model* const> models, const EqualTimeBatch& batch);
Predictions ensemble_predictions(std::span<const Model* const> models, std::span<const Batch> batches);

/// Mean task loss (and its gradient when recorded) for one batch.
Var task_loss(Tape& tape, const Model& model, const Batch& batch, const ForwardContext& ctx = {});

struct TrainOutcome {
  RunResult result;
  Checkpoint checkpoint;
};

/// Trains with early stopping on validation loss and evaluates the best
/// validation checkpoint on the test split. Deterministic given config.seed.
TrainOutcome train(Model& model, const DatasetSplit& split, const TypeVocab& vocab, const TrainConfig& config);

}  // namespace eqtime

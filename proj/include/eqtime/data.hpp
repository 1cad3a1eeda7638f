#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "eqtime/backbone.hpp"
#include "eqtime/equal_time.hpp"

namespace eqtime {

struct EventRecord {
  double timestamp = 0.0;
  std::string type;
  std::vector<double> features;

  bool operator==(const EventRecord&) const = default;
};

/// One step of a partially ordered sequence: events whose relative order is unknown.
struct TimeStep {
  double time = 0.0;
  std::vector<EventRecord> events;

  bool operator==(const TimeStep&) const = default;
};

struct PartiallyOrderedSequence {
  std::string id;
  std::vector<TimeStep> steps;
  std::vector<int> labels;      // multilabel target, one 0/1 entry per class
  std::vector<int> tokens;      // next-token target, one id per step
  std::vector<double> targets;  // optional raw values awaiting thresholding

  bool operator==(const PartiallyOrderedSequence&) const = default;
};

/// Per-file constants: feature dimension plus either a class count or a vocabulary size.
struct DatasetSchema {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::size_t vocab = 0;

  TaskKind task() const { return vocab > 0 ? TaskKind::kNextToken : TaskKind::kMultilabel; }
  std::size_t outputs() const { return vocab > 0 ? vocab : classes; }
  bool operator==(const DatasetSchema&) const = default;
};

struct Dataset {
  DatasetSchema schema;
  std::vector<PartiallyOrderedSequence> sequences;
};

/// Bijection between event type labels and dense ids. Built from training
/// data; the last id is reserved for types never seen in training.
class TypeVocab {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  TypeVocab() : TypeVocab(std::vector<std::string>{}) {}
  /// `labels` excludes the unknown type; duplicates are rejected.
  explicit TypeVocab(std::vector<std::string> labels);
  static TypeVocab from_sequences(std::span<const PartiallyOrderedSequence> sequences);

  int id(std::string_view label) const;
  const std::string& label(int id) const { return labels_.at(static_cast<std::size_t>(id)); }
  int unknown_id() const { return static_cast<int>(labels_.size()) - 1; }
  std::size_t size() const { return labels_.size(); }
  /// Known labels in id order, without the unknown type.
  std::vector<std::string> known_labels() const { return {labels_.begin(), labels_.end() - 1}; }

  bool operator==(const TypeVocab& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> ids_;
};

/// Greedy chained-gap binning. A record joins the open bin when its gap to
/// the previous record is below `tau`; bins larger than `max_events` are cut
/// in arrival order; only the newest `max_steps` bins are kept. A limit of 0
/// disables it.
std::vector<TimeStep> bin_event_stream(std::span<const EventRecord> records, double tau, std::size_t max_steps,
                                       std::size_t max_events);

/// All events of a sequence in stored order.
std::vector<EventRecord> flatten_events(const PartiallyOrderedSequence& sequence);

enum class SplitRole { kTrain, kValidation, kTest };

/// "Value at least one standard deviation above the mean" rule, with
/// statistics taken from the training split only.
class ThresholdRule {
 public:
  static ThresholdRule fit(std::span<const std::vector<double>> values, SplitRole role);

  std::vector<int> apply(std::span<const double> values) const;
  double threshold(std::size_t target) const { return mean_.at(target) + stddev_.at(target); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return stddev_; }

 private:
  std::vector<double> mean_;
  std::vector<double> stddev_;
};

std::vector<std::vector<int>> threshold_labels(const ThresholdRule& rule, std::span<const std::vector<double>> values);

struct SplitFractions {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

struct DatasetSplit {
  DatasetSchema schema;
  std::vector<PartiallyOrderedSequence> train;
  std::vector<PartiallyOrderedSequence> validation;
  std::vector<PartiallyOrderedSequence> test;
  SplitFractions fractions;
  std::uint64_t seed = 0;
};

/// Seeded shuffle then contiguous train/validation/test cut.
DatasetSplit split_dataset(const Dataset& data, std::uint64_t seed, SplitFractions fractions = {});

struct Batch {
  EqualTimeBatch inputs;
  Tensor labels;            // [B, C] for multilabel
  std::vector<int> tokens;  // [B*T] for next-token; 0 on padded steps
  std::vector<std::string> ids;
};

/// Pads steps to the longest sequence and events to the largest live set.
Batch make_batch(std::span<const PartiallyOrderedSequence* const> sequences, const DatasetSchema& schema,
                 const TypeVocab& vocab);

/// Groups sequences by exact step count and cuts each group into batches;
/// the order of sequences and batches is a pure function of `seed`.
std::vector<Batch> bucket_batches(std::span<const PartiallyOrderedSequence> sequences, const DatasetSchema& schema,
                                  const TypeVocab& vocab, std::size_t batch_size, std::uint64_t seed);

Dataset load_jsonl_dataset(const std::filesystem::path& path);
Dataset parse_jsonl_dataset(std::string_view text, const std::string& source = "<memory>");
std::string to_jsonl(const Dataset& data);
void write_jsonl_dataset(const std::filesystem::path& path, const Dataset& data);

/// Number of steps holding n events, keyed by n.
std::map<std::size_t, std::size_t> cooccurrence_histogram(std::span<const PartiallyOrderedSequence> sequences);

}  // namespace eqtime

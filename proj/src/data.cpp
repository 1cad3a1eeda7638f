#include "eqtime/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "eqtime/error.hpp"
#include "json.hpp"

namespace eqtime {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TypeVocab

TypeVocab::TypeVocab(std::vector<std::string> labels) : labels_(std::move(labels)) {
  labels_.emplace_back(kUnknown);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!ids_.emplace(labels_[i], static_cast<int>(i)).second) {
      throw ConfigError("type vocabulary repeats label '" + labels_[i] + "'");
    }
  }
}

TypeVocab TypeVocab::from_sequences(std::span<const PartiallyOrderedSequence> sequences) {
  std::set<std::string> seen;
  for (const auto& seq : sequences)
    for (const auto& step : seq.steps)
      for (const auto& e : step.events) seen.insert(e.type);
  seen.erase(std::string(kUnknown));
  return TypeVocab(std::vector<std::string>(seen.begin(), seen.end()));
}

int TypeVocab::id(std::string_view label) const {
  auto it = ids_.find(std::string(label));
  return it == ids_.end() ? unknown_id() : it->second;
}

// ---------------------------------------------------------------------------
// Binning

std::vector<TimeStep> bin_event_stream(std::span<const EventRecord> records, double tau, std::size_t max_steps,
                                       std::size_t max_events) {
  if (records.empty()) throw IngestionError("cannot bin an empty event stream");
  if (!(tau >= 0.0)) throw ConfigError("bin threshold must be non-negative");
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].timestamp < records[i - 1].timestamp) {
      throw ContractError("event stream is not time-sorted at record " + std::to_string(i));
    }
  }

  std::vector<TimeStep> steps;
  auto close = [&](std::size_t begin, std::size_t end) {
    const std::size_t chunk = max_events ? max_events : end - begin;
    for (std::size_t s = begin; s < end; s += chunk) {
      TimeStep step;
      step.time = records[s].timestamp;
      step.events.assign(records.begin() + static_cast<std::ptrdiff_t>(s),
                         records.begin() + static_cast<std::ptrdiff_t>(std::min(end, s + chunk)));
      steps.push_back(std::move(step));
    }
  };
  std::size_t open = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].timestamp - records[i - 1].timestamp < tau) continue;
    close(open, i);
    open = i;
  }
  close(open, records.size());

  if (max_steps && steps.size() > max_steps) {
    steps.erase(steps.begin(), steps.end() - static_cast<std::ptrdiff_t>(max_steps));
  }
  return steps;
}

std::vector<EventRecord> flatten_events(const PartiallyOrderedSequence& sequence) {
  std::vector<EventRecord> out;
  for (const auto& step : sequence.steps) out.insert(out.end(), step.events.begin(), step.events.end());
  return out;
}

// ---------------------------------------------------------------------------
// Labels

ThresholdRule ThresholdRule::fit(std::span<const std::vector<double>> values, SplitRole role) {
  if (role != SplitRole::kTrain) {
    throw ContractError("label thresholds must be fitted on the training split only");
  }
  if (values.empty()) throw StatisticsError("cannot fit label thresholds on no values");
  const std::size_t c = values.front().size();
  ThresholdRule rule;
  rule.mean_.assign(c, 0.0);
  rule.stddev_.assign(c, 0.0);
  for (const auto& row : values) {
    if (row.size() != c) throw DimensionError("threshold fit: ragged target rows");
    for (std::size_t j = 0; j < c; ++j) rule.mean_[j] += row[j];
  }
  const double n = static_cast<double>(values.size());
  for (double& m : rule.mean_) m /= n;
  for (const auto& row : values)
    for (std::size_t j = 0; j < c; ++j) rule.stddev_[j] += (row[j] - rule.mean_[j]) * (row[j] - rule.mean_[j]);
  for (double& s : rule.stddev_) s = std::sqrt(s / n);
  return rule;
}

std::vector<int> ThresholdRule::apply(std::span<const double> values) const {
  if (values.size() != mean_.size()) {
    throw DimensionError("threshold apply: " + std::to_string(values.size()) + " values for " +
                         std::to_string(mean_.size()) + " targets");
  }
  std::vector<int> labels(values.size());
  for (std::size_t j = 0; j < values.size(); ++j) {
    labels[j] = stddev_[j] > 0.0 ? (values[j] >= mean_[j] + stddev_[j]) : (values[j] > mean_[j]);
  }
  return labels;
}

std::vector<std::vector<int>> threshold_labels(const ThresholdRule& rule, std::span<const std::vector<double>> values) {
  std::vector<std::vector<int>> out;
  out.reserve(values.size());
  for (const auto& row : values) out.push_back(rule.apply(row));
  return out;
}

// ---------------------------------------------------------------------------
// Split

DatasetSplit split_dataset(const Dataset& data, std::uint64_t seed, SplitFractions fractions) {
  const double total = fractions.train + fractions.validation + fractions.test;
  if (fractions.train < 0 || fractions.validation < 0 || fractions.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(data.sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
  const auto n_val = std::min(order.size() - n_train, static_cast<std::size_t>(std::llround(fractions.validation * n)));

  DatasetSplit split;
  split.schema = data.schema;
  split.fractions = fractions;
  split.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
    dst.push_back(data.sequences[order[i]]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Batching

Batch make_batch(std::span<const PartiallyOrderedSequence* const> sequences, const DatasetSchema& schema,
                 const TypeVocab& vocab) {
  if (sequences.empty()) throw ContractError("make_batch: no sequences");
  const std::size_t b = sequences.size();
  const std::size_t m = schema.features;
  std::size_t t = 0;
  std::size_t n = 1;
  for (const auto* seq : sequences) {
    if (seq->steps.empty()) throw ContractError("make_batch: sequence '" + seq->id + "' has no steps");
    t = std::max(t, seq->steps.size());
    for (const auto& step : seq->steps) n = std::max(n, step.events.size());
  }

  Batch batch;
  EqualTimeBatch& in = batch.inputs;
  in.events = Tensor({b, t, n, m}, 0.0);
  in.event_mask = Mask({b, t, n}, false);
  in.step_mask = Mask({b, t}, false);
  in.type_ids.assign(b * t * n, -1);
  const bool next_token = schema.task() == TaskKind::kNextToken;
  if (next_token) batch.tokens.assign(b * t, 0);
  else batch.labels = Tensor({b, schema.classes}, 0.0);

  for (std::size_t bi = 0; bi < b; ++bi) {
    const auto& seq = *sequences[bi];
    batch.ids.push_back(seq.id);
    for (std::size_t ti = 0; ti < seq.steps.size(); ++ti) {
      const auto& step = seq.steps[ti];
      if (step.events.empty()) throw ContractError("make_batch: empty step in '" + seq.id + "'");
      in.step_mask.live[bi * t + ti] = 1;
      for (std::size_t j = 0; j < step.events.size(); ++j) {
        const auto& e = step.events[j];
        if (e.features.size() != m) {
          throw DimensionError("make_batch: event in '" + seq.id + "' has " + std::to_string(e.features.size()) +
                               " features, schema says " + std::to_string(m));
        }
        const std::size_t slot = (bi * t + ti) * n + j;
        in.event_mask.live[slot] = 1;
        in.type_ids[slot] = vocab.id(e.type);
        std::copy(e.features.begin(), e.features.end(), in.events.data().begin() + static_cast<std::ptrdiff_t>(slot * m));
      }
    }
    if (next_token) {
      if (seq.tokens.size() != seq.steps.size()) {
        throw ContractError("make_batch: '" + seq.id + "' has " + std::to_string(seq.tokens.size()) + " tokens for " +
                            std::to_string(seq.steps.size()) + " steps");
      }
      std::copy(seq.tokens.begin(), seq.tokens.end(), batch.tokens.begin() + static_cast<std::ptrdiff_t>(bi * t));
    } else {
      if (seq.labels.size() != schema.classes) {
        throw ContractError("make_batch: '" + seq.id + "' has " + std::to_string(seq.labels.size()) +
                            " labels, schema says " + std::to_string(schema.classes));
      }
      for (std::size_t c = 0; c < schema.classes; ++c) batch.labels[bi * schema.classes + c] = seq.labels[c];
    }
  }
  return batch;
}

std::vector<Batch> bucket_batches(std::span<const PartiallyOrderedSequence> sequences, const DatasetSchema& schema,
                                  const TypeVocab& vocab, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::map<std::size_t, std::vector<const PartiallyOrderedSequence*>> groups;
  for (const auto& seq : sequences) groups[seq.steps.size()].push_back(&seq);

  Rng rng(seed);
  std::vector<Batch> batches;
  for (auto& [length, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t start = 0; start < members.size(); start += batch_size) {
      const std::size_t count = std::min(batch_size, members.size() - start);
      batches.push_back(make_batch(std::span(members).subspan(start, count), schema, vocab));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& what) {
  throw IngestionError(source + ":" + std::to_string(line) + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& source, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(source, line, std::string("missing field '") + key + "'");
  return *it;
}

DatasetSchema parse_schema(const json& header, const std::string& source) {
  if (!header.is_object() || !header.contains("schema")) fail(source, 1, "first line must be a {\"schema\": ...} header");
  const json& s = header["schema"];
  DatasetSchema schema;
  const json& m = require(s, "M", source, 1);
  if (!m.is_number_unsigned() || m.get<std::size_t>() == 0) fail(source, 1, "schema M must be a positive integer");
  schema.features = m.get<std::size_t>();
  const bool has_c = s.contains("C");
  const bool has_v = s.contains("vocab");
  if (has_c == has_v) fail(source, 1, "schema needs exactly one of C or vocab");
  const json& count = has_c ? s["C"] : s["vocab"];
  if (!count.is_number_unsigned() || count.get<std::size_t>() == 0) fail(source, 1, "schema C/vocab must be a positive integer");
  (has_c ? schema.classes : schema.vocab) = count.get<std::size_t>();
  return schema;
}

PartiallyOrderedSequence parse_sequence(const json& obj, const DatasetSchema& schema, const std::string& source,
                                        std::size_t line) {
  if (!obj.is_object()) fail(source, line, "record must be an object");
  PartiallyOrderedSequence seq;
  const json& id = require(obj, "seq_id", source, line);
  if (!id.is_string()) fail(source, line, "seq_id must be a string");
  seq.id = id.get<std::string>();

  const json& steps = require(obj, "steps", source, line);
  if (!steps.is_array() || steps.empty()) fail(source, line, "steps must be a non-empty array");
  double last_t = -std::numeric_limits<double>::infinity();
  for (std::size_t si = 0; si < steps.size(); ++si) {
    const json& st = steps[si];
    if (!st.is_object()) fail(source, line, "step " + std::to_string(si) + " must be an object");
    const json& t = require(st, "t", source, line);
    if (!t.is_number()) fail(source, line, "step " + std::to_string(si) + " time must be a number");
    TimeStep step;
    step.time = t.get<double>();
    if (!std::isfinite(step.time)) fail(source, line, "step " + std::to_string(si) + " time is not finite");
    if (step.time < last_t) fail(source, line, "non-monotone timestamps at step " + std::to_string(si));
    last_t = step.time;
    const json& events = require(st, "events", source, line);
    if (!events.is_array() || events.empty()) fail(source, line, "step " + std::to_string(si) + " has no events");
    for (const json& ev : events) {
      EventRecord e;
      e.timestamp = step.time;
      const json& type = require(ev, "type", source, line);
      if (!type.is_string()) fail(source, line, "event type must be a string");
      e.type = type.get<std::string>();
      const json& feat = require(ev, "feat", source, line);
      if (!feat.is_array() || feat.size() != schema.features) {
        fail(source, line, "feature vector has " + std::to_string(feat.is_array() ? feat.size() : 0) +
                               " entries, schema M is " + std::to_string(schema.features));
      }
      for (const json& x : feat) {
        if (!x.is_number() || !std::isfinite(x.get<double>())) fail(source, line, "feature values must be finite numbers");
        e.features.push_back(x.get<double>());
      }
      step.events.push_back(std::move(e));
    }
    seq.steps.push_back(std::move(step));
  }

  if (schema.task() == TaskKind::kMultilabel) {
    if (obj.contains("label")) {
      const json& label = obj["label"];
      if (!label.is_array() || label.size() != schema.classes) {
        fail(source, line, "label must hold " + std::to_string(schema.classes) + " entries");
      }
      for (const json& x : label) {
        if (!x.is_number_integer() || (x.get<int>() != 0 && x.get<int>() != 1)) fail(source, line, "labels must be 0 or 1");
        seq.labels.push_back(x.get<int>());
      }
    }
    if (obj.contains("targets")) {
      const json& targets = obj["targets"];
      if (!targets.is_array() || targets.size() != schema.classes) {
        fail(source, line, "targets must hold " + std::to_string(schema.classes) + " entries");
      }
      for (const json& x : targets) {
        if (!x.is_number()) fail(source, line, "targets must be numbers");
        seq.targets.push_back(x.get<double>());
      }
    }
    if (seq.labels.empty() && seq.targets.empty()) fail(source, line, "missing field 'label'");
  } else {
    const json& tokens = require(obj, "tokens", source, line);
    if (!tokens.is_array() || tokens.size() != seq.steps.size()) {
      fail(source, line, "tokens must hold one id per step (" + std::to_string(seq.steps.size()) + ")");
    }
    for (const json& x : tokens) {
      if (!x.is_number_integer() || x.get<long long>() < 0 || x.get<long long>() >= static_cast<long long>(schema.vocab)) {
        fail(source, line, "token ids must be integers in [0, " + std::to_string(schema.vocab) + ")");
      }
      seq.tokens.push_back(x.get<int>());
    }
  }
  return seq;
}

}  // namespace

Dataset parse_jsonl_dataset(std::string_view text, const std::string& source) {
  Dataset data;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(source, line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!have_header) {
      data.schema = parse_schema(obj, source);
      have_header = true;
    } else {
      data.sequences.push_back(parse_sequence(obj, data.schema, source, line_no));
    }
    if (end == text.size()) break;
  }
  if (!have_header) throw IngestionError(source + ": empty dataset (no schema header)");
  if (data.sequences.empty()) throw IngestionError(source + ": empty dataset (no sequences)");
  return data;
}

Dataset load_jsonl_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open dataset file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_jsonl_dataset(ss.str(), path.string());
}

std::string to_jsonl(const Dataset& data) {
  std::string out;
  json header;
  header["schema"]["M"] = data.schema.features;
  if (data.schema.vocab) header["schema"]["vocab"] = data.schema.vocab;
  else header["schema"]["C"] = data.schema.classes;
  out += header.dump() + "\n";
  for (const auto& seq : data.sequences) {
    json obj;
    obj["seq_id"] = seq.id;
    json steps = json::array();
    for (const auto& step : seq.steps) {
      json events = json::array();
      for (const auto& e : step.events) events.push_back({{"type", e.type}, {"feat", e.features}});
      steps.push_back({{"t", step.time}, {"events", std::move(events)}});
    }
    obj["steps"] = std::move(steps);
    if (data.schema.vocab) {
      obj["tokens"] = seq.tokens;
    } else {
      if (!seq.labels.empty()) obj["label"] = seq.labels;
      if (!seq.targets.empty()) obj["targets"] = seq.targets;
    }
    out += obj.dump() + "\n";
  }
  return out;
}

void write_jsonl_dataset(const std::filesystem::path& path, const Dataset& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PersistenceError("cannot write dataset file " + path.string());
  out << to_jsonl(data);
}

std::map<std::size_t, std::size_t> cooccurrence_histogram(std::span<const PartiallyOrderedSequence> sequences) {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& seq : sequences)
    for (const auto& step : seq.steps) ++hist[step.events.size()];
  return hist;
}

}  // namespace eqtime

#include "eqtime/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <type_traits>

#include "eqtime/error.hpp"
#include "eqtime/transition.hpp"
#include "json_io.hpp"

namespace eqtime {

using nlohmann::json;

const char* version() { return EQTIME_VERSION; }

// ---------------------------------------------------------------------------
// Config parsing

namespace {

template <typename T>
T as(const json& v, const std::string& where) {
  if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError(where + " must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(where + " must be a number");
  }
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

using Setter = std::function<void(const json&)>;
using Fields = std::map<std::string, Setter>;

template <typename T>
Fields::value_type field(const std::string& section, const std::string& key, T& target) {
  return {key, [&target, where = section + "." + key](const json& v) { target = as<T>(v, where); }};
}

void apply(const json& obj, const std::string& section, const Fields& fields) {
  if (!obj.is_object()) throw ConfigError("'" + section + "' must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown key '" + key + "' in " + section);
    it->second(value);
  }
}

SyntheticConfig parse_synthetic(const json& obj) {
  SyntheticConfig s;
  const std::string sec = "synthetic";
  Fields fields{field(sec, "types", s.types),
                field(sec, "features", s.features),
                field(sec, "sequences", s.sequences),
                field(sec, "min_events", s.min_events),
                field(sec, "max_events", s.max_events),
                field(sec, "burst", s.burst),
                field(sec, "chain_concentration", s.chain_concentration),
                field(sec, "mean_scale", s.mean_scale),
                field(sec, "noise", s.noise),
                field(sec, "classes", s.classes),
                field(sec, "pairs_per_class", s.pairs_per_class),
                field(sec, "pair_weight", s.pair_weight),
                field(sec, "linear_weight", s.linear_weight),
                field(sec, "seed", s.seed)};
  fields["task"] = [&s](const json& v) { s.task = parse_task_kind(as<std::string>(v, "synthetic.task")); };
  apply(obj, sec, fields);
  return s;
}

json synthetic_to_json(const SyntheticConfig& s) {
  return json{{"task", std::string(to_string(s.task))},
              {"types", s.types},
              {"features", s.features},
              {"sequences", s.sequences},
              {"min_events", s.min_events},
              {"max_events", s.max_events},
              {"burst", s.burst},
              {"chain_concentration", s.chain_concentration},
              {"mean_scale", s.mean_scale},
              {"noise", s.noise},
              {"classes", s.classes},
              {"pairs_per_class", s.pairs_per_class},
              {"pair_weight", s.pair_weight},
              {"linear_weight", s.linear_weight},
              {"seed", s.seed}};
}

const char* twin_name(Twin t) { return t == Twin::kBinned ? "binned" : "ordered"; }

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

SyntheticConfig effective_synthetic(const ExperimentConfig& c) {
  SyntheticConfig s = *c.synthetic;
  s.tau = c.pipeline.tau;
  s.max_steps = c.pipeline.max_steps;
  s.max_set = c.pipeline.max_events;
  s.split_seed = c.pipeline.split_seed;
  return s;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  PipelineConfig& p = c.pipeline;
  TrainConfig& t = c.train;
  Fields top;
  top["dataset"] = [&](const json& v) { c.dataset = resolve(as<std::string>(v, "dataset"), base_dir); };
  top["output"] = [&](const json& v) { c.output = resolve(as<std::string>(v, "output"), base_dir); };
  top["synthetic"] = [&](const json& v) { c.synthetic = parse_synthetic(v); };
  top["twin"] = [&](const json& v) {
    const auto name = as<std::string>(v, "twin");
    if (name == "binned") c.twin = Twin::kBinned;
    else if (name == "ordered") c.twin = Twin::kOrdered;
    else throw ConfigError("twin must be 'binned' or 'ordered', got '" + name + "'");
  };
  top["seeds"] = [&](const json& v) { c.seeds = as<std::vector<std::uint64_t>>(v, "seeds"); };
  top["pipeline"] = [&](const json& v) {
    Fields f{field("pipeline", "tau", p.tau), field("pipeline", "max_steps", p.max_steps),
             field("pipeline", "max_events", p.max_events), field("pipeline", "split_seed", p.split_seed),
             field("pipeline", "transition_alpha", p.transition_alpha)};
    f["fractions"] = [&](const json& x) {
      const auto fr = as<std::vector<double>>(x, "pipeline.fractions");
      if (fr.size() != 3) throw ConfigError("pipeline.fractions must list train, validation and test");
      p.fractions = {fr[0], fr[1], fr[2]};
    };
    apply(v, "pipeline", f);
  };
  top["train"] = [&](const json& v) {
    apply(v, "train",
          {field("train", "learning_rate", t.learning_rate), field("train", "beta1", t.beta1),
           field("train", "beta2", t.beta2), field("train", "epsilon", t.epsilon), field("train", "epochs", t.epochs),
           field("train", "patience", t.patience), field("train", "batch_size", t.batch_size),
           field("train", "clip_norm", t.clip_norm), field("train", "decision_threshold", t.decision_threshold)});
  };
  top["model"] = [&](const json& v) {
    if (!v.is_object()) throw ConfigError("'model' must be a JSON object");
    json spec = v;
    if (spec.contains("type_embedding") && spec["type_embedding"].is_string()) {
      if (spec["type_embedding"] != "vocab") throw ConfigError("model.type_embedding must be an integer or \"vocab\"");
      c.embed_types = true;
      spec.erase("type_embedding");
    }
    c.model = model_spec_from_json(spec);
  };
  apply(doc, "config", top);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

void ExperimentConfig::validate() const {
  if (dataset.empty() == !synthetic.has_value()) throw ConfigError("config needs exactly one of 'dataset' or 'synthetic'");
  if (twin == Twin::kOrdered && !synthetic) throw ConfigError("the ordered twin exists only for synthetic data");
  if (!(pipeline.tau >= 0.0) || !std::isfinite(pipeline.tau)) throw ConfigError("pipeline.tau must be finite and >= 0");
  if (!(pipeline.transition_alpha >= 0.0)) throw ConfigError("pipeline.transition_alpha must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) throw ConfigError("seeds must be distinct");
  if (output.empty()) throw ConfigError("output directory must be set");
  train.validate();
  if (synthetic) effective_synthetic(*this).validate();
}

std::string ExperimentConfig::canonical() const {
  json m = model_spec_to_json(model);
  if (embed_types) m["type_embedding"] = "vocab";
  json doc{{"dataset", dataset.generic_string()},
           {"synthetic", synthetic ? synthetic_to_json(*synthetic) : json()},
           {"twin", twin_name(twin)},
           {"pipeline",
            {{"tau", pipeline.tau},
             {"max_steps", pipeline.max_steps},
             {"max_events", pipeline.max_events},
             {"split_seed", pipeline.split_seed},
             {"fractions", {pipeline.fractions.train, pipeline.fractions.validation, pipeline.fractions.test}},
             {"transition_alpha", pipeline.transition_alpha}}},
           {"model", m},
           {"train",
            {{"learning_rate", train.learning_rate},
             {"beta1", train.beta1},
             {"beta2", train.beta2},
             {"epsilon", train.epsilon},
             {"epochs", train.epochs},
             {"patience", train.patience},
             {"batch_size", train.batch_size},
             {"clip_norm", train.clip_norm},
             {"decision_threshold", train.decision_threshold}}},
           {"seeds", seeds},
           {"output", output.generic_string()}};
  return doc.dump();
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical())); }

std::filesystem::path ExperimentConfig::data_dir(Twin which) const { return output / "data" / twin_name(which); }

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

class ReportBuilder {
 public:
  ReportBuilder(const ExperimentConfig& config, const std::string& command)
      : hash_(config.hash()) {
    text_ << "# eqtime " << version() << " " << command << " config " << hash_ << "\n";
  }

  std::ostringstream& text() { return text_; }
  void line(json record) {
    record["version"] = version();
    record["config_hash"] = hash_;
    jsonl_ << record.dump() << "\n";
  }
  Report finish() { return {text_.str(), jsonl_.str()}; }

 private:
  std::string hash_;
  std::ostringstream text_;
  std::ostringstream jsonl_;
};

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PersistenceError("cannot write " + path.string());
  out << text;
}

constexpr const char* kSplitNames[] = {"train", "validation", "test"};

}  // namespace

void Report::write(const std::filesystem::path& stem) const {
  write_text(stem.string() + ".txt", text);
  write_text(stem.string() + ".jsonl", jsonl);
}

// ---------------------------------------------------------------------------
// prepare

namespace {

DatasetSplit prepare_file(const ExperimentConfig& config) {
  if (!std::filesystem::exists(config.dataset)) throw ConfigError("dataset file not found: " + config.dataset.string());
  Dataset raw = load_jsonl_dataset(config.dataset);
  const PipelineConfig& p = config.pipeline;
  if (raw.schema.task() == TaskKind::kMultilabel) {
    for (auto& seq : raw.sequences) {
      const auto events = flatten_events(seq);
      seq.steps = bin_event_stream(events, p.tau, p.max_steps, p.max_events);
    }
  }
  DatasetSplit split = split_dataset(raw, p.split_seed, p.fractions);
  if (split.train.empty()) throw ConfigError("the training split is empty");

  const bool has_targets = !split.train.front().targets.empty();
  if (has_targets) {
    std::vector<std::vector<double>> values;
    for (const auto& s : split.train) values.push_back(s.targets);
    const ThresholdRule rule = ThresholdRule::fit(values, SplitRole::kTrain);
    for (auto* part : {&split.train, &split.validation, &split.test})
      for (auto& s : *part) {
        if (s.targets.empty()) throw IngestionError(config.dataset.string() + ": sequence '" + s.id + "' has no targets");
        s.labels = rule.apply(s.targets);
        s.targets.clear();
      }
  }
  if (split.schema.task() == TaskKind::kMultilabel) {
    for (auto* part : {&split.train, &split.validation, &split.test})
      for (const auto& s : *part)
        if (s.labels.size() != split.schema.classes) {
          throw IngestionError(config.dataset.string() + ": sequence '" + s.id + "' has " +
                               std::to_string(s.labels.size()) + " labels, schema says " +
                               std::to_string(split.schema.classes));
        }
  }
  return split;
}

void write_split(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir);
  const std::vector<PartiallyOrderedSequence>* parts[] = {&split.train, &split.validation, &split.test};
  for (std::size_t i = 0; i < 3; ++i) {
    write_jsonl_dataset(dir / (std::string(kSplitNames[i]) + ".jsonl"), Dataset{split.schema, *parts[i]});
  }
}

}  // namespace

PrepareSummary prepare(const ExperimentConfig& config, bool emit_transition) {
  config.validate();
  std::map<Twin, DatasetSplit> outputs;
  if (config.synthetic) {
    SyntheticData data = generate_synthetic(effective_synthetic(config));
    outputs.emplace(Twin::kBinned, std::move(data.binned));
    outputs.emplace(Twin::kOrdered, std::move(data.ordered));
  } else {
    outputs.emplace(Twin::kBinned, prepare_file(config));
  }
  for (const auto& [twin, split] : outputs) write_split(config.data_dir(twin), split);

  const DatasetSplit& selected = outputs.at(config.twin);
  PrepareSummary summary;
  summary.split_sizes = {{"train", selected.train.size()},
                         {"validation", selected.validation.size()},
                         {"test", selected.test.size()}};
  std::vector<PartiallyOrderedSequence> all = selected.train;
  all.insert(all.end(), selected.validation.begin(), selected.validation.end());
  all.insert(all.end(), selected.test.begin(), selected.test.end());
  summary.histogram = cooccurrence_histogram(all);
  double events = 0.0, steps = 0.0;
  for (const auto& [n, count] : summary.histogram) {
    events += static_cast<double>(n * count);
    steps += static_cast<double>(count);
  }
  summary.mean_events_per_step = steps > 0 ? events / steps : 0.0;

  std::size_t matrix_types = 0;
  if (emit_transition) {
    const TypeVocab vocab = TypeVocab::from_sequences(selected.train);
    const TransitionMatrix m = estimate_transition_matrix(selected.train, vocab, config.pipeline.transition_alpha);
    save_matrix(config.transition_path(), m);
    summary.transition_written = true;
    matrix_types = m.size();
  }

  ReportBuilder r(config, "prepare");
  auto& t = r.text();
  t << "twin: " << twin_name(config.twin) << "\n\n";
  t << pad("split", 12) << "sequences\n";
  for (const char* name : kSplitNames) t << pad(name, 12) << summary.split_sizes.at(name) << "\n";
  t << "\n" << pad("events/step", 13) << pad("steps", 10) << "fraction\n";
  for (const auto& [n, count] : summary.histogram) {
    t << pad(std::to_string(n), 13) << pad(std::to_string(count), 10) << fixed(static_cast<double>(count) / steps, 4)
      << "\n";
    r.line({{"kind", "histogram"}, {"events", n}, {"steps", count}});
  }
  t << "\nmean events per step: " << fixed(summary.mean_events_per_step, 4) << "\n";
  r.line({{"kind", "prepare"},
          {"twin", twin_name(config.twin)},
          {"splits", summary.split_sizes},
          {"mean_events_per_step", summary.mean_events_per_step}});
  if (summary.transition_written) {
    t << "transition matrix: transition.json (" << matrix_types << " types)\n";
    r.line({{"kind", "transition"}, {"path", "transition.json"}, {"types", matrix_types}});
  }
  summary.report = r.finish();
  summary.report.write(config.reports_dir() / "prepare");
  return summary;
}

DatasetSplit load_prepared(const ExperimentConfig& config) {
  const auto dir = config.data_dir();
  DatasetSplit split;
  std::vector<PartiallyOrderedSequence>* parts[] = {&split.train, &split.validation, &split.test};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto path = dir / (std::string(kSplitNames[i]) + ".jsonl");
    if (!std::filesystem::exists(path)) throw ConfigError("prepared data not found at " + path.string() + "; run prepare first");
    Dataset d = load_jsonl_dataset(path);
    if (i == 0) split.schema = d.schema;
    else if (!(d.schema == split.schema)) throw IngestionError(path.string() + ": schema differs from the training split");
    *parts[i] = std::move(d.sequences);
  }
  split.fractions = config.pipeline.fractions;
  split.seed = config.pipeline.split_seed;
  return split;
}

// ---------------------------------------------------------------------------
// train

TrainSummary train_experiment(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const DatasetSplit split = load_prepared(config);
  const TypeVocab vocab = TypeVocab::from_sequences(split.train);
  ModelSpec spec = config.model;
  spec.features = split.schema.features;
  spec.outputs = split.schema.outputs();
  spec.task = split.schema.task();
  if (config.embed_types) spec.type_embedding = vocab.size();
  spec.validate();

  std::shared_ptr<const TransitionMatrix> matrix;
  if (spec.needs_transition()) {
    if (!std::filesystem::exists(config.transition_path())) {
      throw ConfigError("model '" + spec.name() + "' needs " + config.transition_path().string() +
                        "; run prepare with --emit-transition-matrix");
    }
    try {
      matrix = std::make_shared<const TransitionMatrix>(load_matrix(config.transition_path()));
    } catch (const PersistenceError& e) {
      throw ConfigError(std::string("cannot use the transition matrix: ") + e.what());
    }
    if (!(matrix->vocab() == vocab)) throw ConfigError("transition matrix types differ from the training vocabulary");
  }

  TrainSummary summary;
  const auto dir = config.runs_dir() / spec.name();
  ReportBuilder r(config, "train");
  for (std::uint64_t seed : config.seeds) {
    TrainConfig tc = config.train;
    tc.seed = seed;
    Model model = Model::compose(spec, seed, matrix);
    TrainOutcome out;
    try {
      out = train(model, split, vocab, tc);
    } catch (const TrainingError& e) {
      throw TrainingError(spec.name() + " seed " + std::to_string(seed) + ": " + e.what());
    }
    const std::string stem = "seed-" + std::to_string(seed);
    out.checkpoint.save(dir / (stem + ".ckpt"));
    json run{{"kind", "run"},
             {"model", out.result.model},
             {"seed", seed},
             {"metric", out.result.metric},
             {"test_metric", out.result.test_metric},
             {"best_epoch", out.result.best_epoch},
             {"train_loss", out.result.train_loss},
             {"validation_loss", out.result.validation_loss}};
    write_text(dir / (stem + ".json"), run.dump() + "\n");
    r.line(run);
    log << "trained " << spec.name() << " seed " << seed << ": " << out.result.metric << " "
        << fixed(out.result.test_metric) << " after " << out.result.train_loss.size() << " epochs in "
        << fixed(out.result.wall_seconds, 1) << "s\n";
    summary.runs.push_back(std::move(out.result));
  }

  std::vector<double> values;
  for (const auto& run : summary.runs) values.push_back(run.test_metric);
  const std::string metric = summary.runs.front().metric;
  auto& t = r.text();
  t << pad("model", 16) << pad("metric", 12) << pad("runs", 6) << pad("mean", 12) << "std\n";
  t << pad(spec.name(), 16) << pad(metric, 12) << pad(std::to_string(values.size()), 6) << pad(fixed(mean_of(values)), 12)
    << fixed(sample_std(values)) << "\n\n";
  for (const auto& run : summary.runs) t << "seed " << run.seed << ": " << fixed(run.test_metric) << "\n";
  r.line({{"kind", "aggregate"},
          {"model", spec.name()},
          {"metric", metric},
          {"runs", values.size()},
          {"mean", mean_of(values)},
          {"std", sample_std(values)}});
  summary.report = r.finish();
  summary.report.write(config.reports_dir() / ("train-" + spec.name()));
  return summary;
}

// ---------------------------------------------------------------------------
// eval

EvalSummary evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoints, const EvalOptions& options) {
  config.validate();
  if (!std::filesystem::is_directory(checkpoints)) throw ConfigError("checkpoint directory not found: " + checkpoints.string());
  const DatasetSplit split = load_prepared(config);

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(checkpoints))
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .ckpt files under " + checkpoints.string());

  EvalSummary summary;
  ReportBuilder r(config, "eval");
  auto& t = r.text();
  std::vector<Checkpoint> loaded;
  std::vector<Model> models;
  std::string metric;
  t << pad("checkpoint", 36) << pad("model", 16) << "test metric\n";
  for (const auto& path : files) {
    Checkpoint ck = Checkpoint::load(path);
    const ModelSpec& s = ck.spec;
    if (s.features != split.schema.features || s.outputs != split.schema.outputs() || s.task != split.schema.task()) {
      throw ConfigError("checkpoint " + path.string() + " does not match the dataset schema");
    }
    Model model = ck.restore();
    const auto batches = bucket_batches(split.test, split.schema, ck.vocab, config.train.batch_size, config.train.seed);
    const double value = score(collect_predictions(model, batches), config.train.decision_threshold);
    metric = s.task == TaskKind::kMultilabel ? "f1" : "perplexity";
    const std::string rel = std::filesystem::relative(path, checkpoints).generic_string();
    summary.metrics[s.name()].push_back(value);
    t << pad(rel, 36) << pad(s.name(), 16) << fixed(value) << "\n";
    r.line({{"kind", "checkpoint"}, {"path", rel}, {"model", s.name()}, {"metric", metric}, {"value", value}});
    loaded.push_back(std::move(ck));
    models.push_back(std::move(model));
  }

  t << "\n" << pad("model", 16) << pad("metric", 12) << pad("runs", 6) << pad("mean", 12) << "std\n";
  for (const auto& [name, values] : summary.metrics) {
    t << pad(name, 16) << pad(metric, 12) << pad(std::to_string(values.size()), 6) << pad(fixed(mean_of(values)), 12)
      << fixed(sample_std(values)) << "\n";
    r.line({{"kind", "aggregate"},
            {"model", name},
            {"metric", metric},
            {"runs", values.size()},
            {"mean", mean_of(values)},
            {"std", sample_std(values)}});
  }

  if (options.ensemble) {
    for (const auto& ck : loaded)
      if (!(ck.vocab == loaded.front().vocab)) throw ConfigError("ensemble members were trained on different type vocabularies");
    std::vector<const Model*> members;
    for (const auto& m : models) members.push_back(&m);
    const auto batches =
        bucket_batches(split.test, split.schema, loaded.front().vocab, config.train.batch_size, config.train.seed);
    summary.ensemble_metric = score(ensemble_predictions(members, batches), config.train.decision_threshold);
    t << "\nensemble of " << members.size() << ": " << metric << " " << fixed(*summary.ensemble_metric) << "\n";
    r.line({{"kind", "ensemble"}, {"members", members.size()}, {"metric", metric}, {"value", *summary.ensemble_metric}});
  }

  if (options.compare) {
    const auto& [a, b] = *options.compare;
    for (const auto& name : {a, b})
      if (!summary.metrics.count(name)) throw ConfigError("no checkpoints for model '" + name + "'");
    const RunComparison c = compare_runs(summary.metrics.at(a), summary.metrics.at(b));
    summary.comparison = c;
    t << "\n" << pad("compare", 30) << pad("mean a", 12) << pad("std a", 12) << pad("mean b", 12) << pad("std b", 12)
      << "p (Welch)\n";
    t << pad(a + " vs " + b, 30) << pad(fixed(c.mean_a), 12) << pad(fixed(c.std_a), 12) << pad(fixed(c.mean_b), 12)
      << pad(fixed(c.std_b), 12) << fixed(c.p_value) << "\n";
    r.line({{"kind", "compare"},
            {"a", a},
            {"b", b},
            {"mean_a", c.mean_a},
            {"std_a", c.std_a},
            {"mean_b", c.mean_b},
            {"std_b", c.std_b},
            {"t", c.t_statistic},
            {"df", c.degrees_of_freedom},
            {"p_value", c.p_value}});
  }
  summary.report = r.finish();
  summary.report.write(config.reports_dir() / "eval");
  return summary;
}

}  // namespace eqtime

#include "eqtime/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "eqtime/error.hpp"
#include "json_io.hpp"

namespace eqtime {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("moment decay rates must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
}

bool RunResult::same_outcome(const RunResult& o) const {
  return model == o.model && seed == o.seed && train_loss == o.train_loss && validation_loss == o.validation_loss &&
         best_epoch == o.best_epoch && metric == o.metric && test_metric == o.test_metric;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const TrainConfig& config, const ParameterStore& params) : config_(config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape(), 0.0);
    v_.emplace_back(params[i].value.shape(), 0.0);
  }
}

double Adam::step(ParameterStore& params) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    for (double g : params[i].grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable) continue;
    auto m = m_[i].data();
    auto v = v_[i].data();
    auto w = p.value.data();
    auto g = p.grad.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * gk;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * gk * gk;
      w[k] -= config_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint

Checkpoint Checkpoint::capture(const Model& model, const TypeVocab& vocab, std::map<std::string, double> metrics) {
  Checkpoint c;
  c.spec = model.spec();
  c.vocab = vocab;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    c.params.emplace_back(model.params()[i].name, model.params()[i].value);
  }
  c.transition = model.transition();
  c.metrics = std::move(metrics);
  return c;
}

Model Checkpoint::restore() const {
  Model model = Model::compose(spec, 0, transition);
  ParameterStore& store = model.params();
  if (store.size() != params.size()) {
    throw PersistenceError("checkpoint holds " + std::to_string(params.size()) + " parameters, model '" + spec.name() +
                           "' has " + std::to_string(store.size()));
  }
  for (const auto& [name, value] : params) {
    if (!store.contains(name)) throw PersistenceError("checkpoint parameter '" + name + "' is unknown to the model");
    Parameter& p = store.get(name);
    if (p.value.shape() != value.shape()) {
      throw PersistenceError("checkpoint parameter '" + name + "' has shape " + shape_string(value.shape()) +
                             ", model expects " + shape_string(p.value.shape()));
    }
    p.value = value;
  }
  return model;
}

namespace {
constexpr const char* kCheckpointTag = "eqtime-checkpoint";
}

std::string Checkpoint::serialize() const {
  json payload;
  payload["spec"] = model_spec_to_json(spec);
  payload["vocab"] = vocab.known_labels();
  json ps = json::array();
  for (const auto& [name, value] : params) {
    ps.push_back({{"name", name}, {"shape", value.shape()}, {"data", value.storage()}});
  }
  payload["params"] = std::move(ps);
  payload["transition"] = transition ? json::parse(transition->serialize()) : json();
  payload["metrics"] = metrics;
  json doc;
  doc["format"] = kCheckpointTag;
  doc["version"] = kFormatVersion;
  doc["checksum"] = hex64(fnv1a64(payload.dump()));
  doc["payload"] = std::move(payload);
  return doc.dump() + "\n";
}

Checkpoint Checkpoint::deserialize(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw PersistenceError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != kCheckpointTag) throw PersistenceError("not a checkpoint file");
    const int version = doc.at("version").get<int>();
    if (version != kFormatVersion) throw PersistenceError("unsupported checkpoint version " + std::to_string(version));
    const json& payload = doc.at("payload");
    if (hex64(fnv1a64(payload.dump())) != doc.at("checksum").get<std::string>()) {
      throw PersistenceError("checkpoint checksum mismatch");
    }
    Checkpoint c;
    c.spec = model_spec_from_json(payload.at("spec"));
    c.vocab = TypeVocab(payload.at("vocab").get<std::vector<std::string>>());
    for (const json& p : payload.at("params")) {
      c.params.emplace_back(p.at("name").get<std::string>(),
                            Tensor(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>()));
    }
    if (!payload.at("transition").is_null()) {
      c.transition = std::make_shared<const TransitionMatrix>(TransitionMatrix::deserialize(payload["transition"].dump()));
    }
    c.metrics = payload.at("metrics").get<std::map<std::string, double>>();
    return c;
  } catch (const json::exception& e) {
    throw PersistenceError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw PersistenceError(std::string("checkpoint holds an invalid model spec: ") + e.what());
  } catch (const DimensionError& e) {
    throw PersistenceError(std::string("checkpoint parameter is inconsistent: ") + e.what());
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PersistenceError("cannot write checkpoint " + path.string());
  out << serialize();
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

// ---------------------------------------------------------------------------
// Evaluation

Var task_loss(Tape& tape, const Model& model, const Batch& batch, const ForwardContext& ctx) {
  Var logits = model.forward(tape, batch.inputs, ctx);
  if (model.spec().task == TaskKind::kMultilabel) return ops::bce_with_logits(logits, batch.labels);
  return ops::cross_entropy(logits, batch.tokens, batch.inputs.step_mask);
}

namespace {

// Loss weight of a batch: sequences for multilabel, live steps for next-token.
double batch_weight(const Batch& batch, TaskKind task) {
  if (task == TaskKind::kMultilabel) return static_cast<double>(batch.inputs.batch());
  double n = 0.0;
  for (auto v : batch.inputs.step_mask.live) n += v;
  return n;
}

struct PredictionBuffer {
  std::vector<double> probs;
  std::vector<double> labels;
  std::vector<int> tokens;
  std::vector<std::uint8_t> live;
  std::size_t width = 0;

  void append(const Tensor& p, const Batch& batch, TaskKind task) {
    width = p.dim(p.rank() - 1);
    probs.insert(probs.end(), p.data().begin(), p.data().end());
    if (task == TaskKind::kMultilabel) {
      labels.insert(labels.end(), batch.labels.data().begin(), batch.labels.data().end());
    } else {
      tokens.insert(tokens.end(), batch.tokens.begin(), batch.tokens.end());
      live.insert(live.end(), batch.inputs.step_mask.live.begin(), batch.inputs.step_mask.live.end());
    }
  }
};

}  // namespace

Predictions collect_predictions(const Model& model, std::span<const Batch> batches) {
  const Model* one[] = {&model};
  return ensemble_predictions(one, batches);
}

Tensor ensemble_predict(std::span<const Model* const> models, const EqualTimeBatch& batch) {
  if (models.empty()) throw ConfigError("ensemble needs at least one model");
  const ModelSpec& first = models[0]->spec();
  for (const Model* m : models) {
    if (m->spec().task != first.task || m->spec().outputs != first.outputs) {
      throw ConfigError("ensemble members disagree on the task head (" + m->spec().name() + " vs " + first.name() + ")");
    }
  }
  Tensor sum = models[0]->predict(batch);
  for (std::size_t i = 1; i < models.size(); ++i) {
    Tensor p = models[i]->predict(batch);
    if (p.shape() != sum.shape()) throw ConfigError("ensemble members produce different output shapes");
    for (std::size_t k = 0; k < p.size(); ++k) sum[k] += p[k];
  }
  if (models.size() > 1)
    for (double& v : sum.data()) v /= static_cast<double>(models.size());
  return sum;
}

Predictions ensemble_predictions(std::span<const Model* const> models, std::span<const Batch> batches) {
  if (models.empty()) throw ConfigError("ensemble needs at least one model");
  Predictions out;
  out.task = models[0]->spec().task;
  PredictionBuffer buffer;
  buffer.width = models[0]->spec().outputs;
  for (const Batch& b : batches) buffer.append(ensemble_predict(models, b.inputs), b, out.task);
  const std::size_t rows = buffer.probs.size() / buffer.width;
  out.probs = Tensor({rows, buffer.width}, std::move(buffer.probs));
  if (out.task == TaskKind::kMultilabel) {
    out.labels = Tensor({rows, buffer.width}, std::move(buffer.labels));
  } else {
    out.tokens = std::move(buffer.tokens);
    out.live = Mask({rows}, std::move(buffer.live));
  }
  return out;
}

double score(const Predictions& p, double threshold) {
  if (p.task == TaskKind::kMultilabel) return f1_multilabel(p.probs, p.labels, threshold).macro;
  return perplexity(p.probs, p.tokens, p.live).value;
}

// ---------------------------------------------------------------------------
// Training loop

TrainOutcome train(Model& model, const DatasetSplit& split, const TypeVocab& vocab, const TrainConfig& config) {
  config.validate();
  if (split.train.empty() || split.validation.empty() || split.test.empty()) {
    throw ConfigError("training needs non-empty train, validation and test splits");
  }
  if (split.schema.features != model.spec().features || split.schema.outputs() != model.spec().outputs ||
      split.schema.task() != model.spec().task) {
    throw ConfigError("model '" + model.spec().name() + "' does not match the dataset schema");
  }
  const auto started = std::chrono::steady_clock::now();
  const TaskKind task = model.spec().task;
  ParameterStore& params = model.params();
  Adam adam(config, params);
  Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const ForwardContext train_ctx{true, model.spec().dropout, &dropout_rng};

  const auto validation = bucket_batches(split.validation, split.schema, vocab, config.batch_size, config.seed);
  const auto test = bucket_batches(split.test, split.schema, vocab, config.batch_size, config.seed);

  RunResult result;
  result.model = model.spec().name();
  result.seed = config.seed;
  result.metric = task == TaskKind::kMultilabel ? "f1" : "perplexity";

  ParameterStore best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = bucket_batches(split.train, split.schema, vocab, config.batch_size, config.seed + 7919 * (epoch + 1));
    double total = 0.0;
    double weight = 0.0;
    for (const Batch& b : batches) {
      params.zero_grad();
      Tape tape;
      Var loss = task_loss(tape, model, b, train_ctx);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      tape.backward(loss);
      adam.step(params);
      const double w = batch_weight(b, task);
      total += value * w;
      weight += w;
      ++step;
    }
    result.train_loss.push_back(total / weight);

    double val_total = 0.0;
    double val_weight = 0.0;
    for (const Batch& b : validation) {
      Tape tape;
      const double w = batch_weight(b, task);
      val_total += task_loss(tape, model, b).value().item() * w;
      val_weight += w;
    }
    const double val_loss = val_total / val_weight;
    if (!std::isfinite(val_loss)) throw TrainingError("validation loss diverged at epoch " + std::to_string(epoch));
    result.validation_loss.push_back(val_loss);

    if (val_loss < best_loss) {
      best_loss = val_loss;
      result.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best[i].value = params[i].value;
      stale = 0;
    } else if (++stale > config.patience) {
      break;
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best[i].value;
  result.test_metric = score(collect_predictions(model, test), config.decision_threshold);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::map<std::string, double> metrics{{"test_" + result.metric, result.test_metric},
                                        {"best_validation_loss", best_loss},
                                        {"best_epoch", static_cast<double>(result.best_epoch)}};
  return {result, Checkpoint::capture(model, vocab, std::move(metrics))};
}

}  // namespace eqtime

#include "eqtime/model.hpp"

#include <cmath>

#include "eqtime/error.hpp"

namespace eqtime {

std::string ModelSpec::name() const {
  std::string u = equal_time == EqualTimeKind::kTransformerSetTransition ? "trans" : std::string(to_string(equal_time));
  std::string n = u + "-" + std::string(to_string(backbone));
  if (needs_transition()) n += "-T";
  return n;
}

ModelSpec& ModelSpec::with_name(std::string_view model_name) {
  std::string_view rest = model_name;
  bool transition = false;
  if (rest.size() > 2 && rest.substr(rest.size() - 2) == "-T") {
    transition = true;
    rest.remove_suffix(2);
  }
  const auto dash = rest.find('-');
  if (dash == std::string_view::npos) throw ConfigError("model name '" + std::string(model_name) + "' is not of the form U-V");
  EqualTimeKind u = parse_equal_time_kind(rest.substr(0, dash));
  BackboneKind v = parse_backbone_kind(rest.substr(dash + 1));
  if (transition) {
    if (u != EqualTimeKind::kTransformerSet) {
      throw ConfigError("transition input needs the transformer equal-time layer, got '" + std::string(model_name) + "'");
    }
    u = EqualTimeKind::kTransformerSetTransition;
  }
  equal_time = u;
  backbone = v;
  return *this;
}

void ModelSpec::validate() const {
  if (features == 0) throw ConfigError("model feature dimension M must be positive");
  if ((equal_time == EqualTimeKind::kTransformerSet || equal_time == EqualTimeKind::kTransformerSetTransition) &&
      (set_heads == 0 || features % set_heads != 0)) {
    throw ConfigError("set transformer: M = " + std::to_string(features) + " not divisible by " +
                      std::to_string(set_heads) + " heads");
  }
  if (set_blocks < 1 || set_blocks > 2) throw ConfigError("set transformer depth must be 1 or 2");
  if (equal_time == EqualTimeKind::kLstmSet && (set_hidden == 0 || set_attention == 0)) {
    throw ConfigError("LSTM-set dimensions must be positive");
  }
  BackboneSpec b{backbone, features, hidden, layers, heads, ff, task, outputs, dropout};
  b.validate();
}

Model Model::compose(const ModelSpec& spec, std::uint64_t seed, std::shared_ptr<const TransitionMatrix> transition) {
  spec.validate();
  if (spec.needs_transition() && !transition) {
    throw ConfigError("model '" + spec.name() + "' needs a transition matrix");
  }
  if (spec.needs_transition() && spec.type_embedding && spec.type_embedding != transition->size()) {
    throw ConfigError("type embedding has " + std::to_string(spec.type_embedding) + " rows but the transition matrix " +
                      std::to_string(transition->size()) + " types");
  }
  Model m;
  m.spec_ = spec;
  m.params_ = std::make_unique<ParameterStore>();
  m.transition_ = spec.needs_transition() ? std::move(transition) : nullptr;
  Rng rng(seed);
  ParameterStore& store = *m.params_;

  if (spec.type_embedding) m.type_table_ = &add_weight(store, "embed.types", spec.type_embedding, spec.features, rng);

  switch (spec.equal_time) {
    case EqualTimeKind::kAverage:
      break;
    case EqualTimeKind::kDeepSet:
      m.deep_set_ = DeepSetParams::create(store, "set.ds", spec.features, rng);
      break;
    case EqualTimeKind::kLstmSet:
      m.lstm_set_ = LstmSetParams::create(store, "set.lstm", spec.features, spec.set_hidden, spec.set_attention,
                                          spec.set_init, rng);
      m.lstm_set_->fixed_iterations = spec.set_iterations;
      break;
    case EqualTimeKind::kTransformerSet:
    case EqualTimeKind::kTransformerSetTransition:
      m.set_attention_ = SetAttentionParams::create(store, "set.trans", spec.features, spec.set_heads, spec.set_ff,
                                                    spec.set_blocks, spec.set_pooling, rng);
      break;
  }

  BackboneSpec b{spec.backbone, spec.features, spec.hidden, spec.layers, spec.heads, spec.ff, spec.task, spec.outputs,
                 spec.dropout};
  m.backbone_ = Backbone::create(b, store, "seq", rng);

  // Created last and zero-initialised, so every other parameter matches the
  // plain transformer model drawn from the same seed.
  if (spec.needs_transition()) m.transition_bias_ = TransitionBiasParams::create(store, "set.transition", *m.set_attention_);
  return m;
}

Var Model::represent(Tape& tape, const EqualTimeBatch& batch, const ForwardContext& ctx) const {
  if (batch.features() != spec_.features) {
    throw DimensionError("model expects M = " + std::to_string(spec_.features) + ", batch has " +
                         std::to_string(batch.features()));
  }
  Var events = tape.constant(batch.events);
  if (type_table_) {
    const Shape prefix{batch.batch(), batch.steps(), batch.slots()};
    events = ops::add(events, ops::embedding(tape.param(*type_table_), batch.type_ids, prefix));
  }
  switch (spec_.equal_time) {
    case EqualTimeKind::kAverage: return avg_set_forward(tape, events, batch);
    case EqualTimeKind::kDeepSet: return deep_set_forward(tape, events, batch, *deep_set_);
    case EqualTimeKind::kLstmSet: return lstm_set_forward(tape, events, batch, *lstm_set_);
    case EqualTimeKind::kTransformerSet: return transformer_set_forward(tape, events, batch, *set_attention_, ctx);
    case EqualTimeKind::kTransformerSetTransition:
      return transformer_set_transition_forward(tape, events, batch, *set_attention_, *transition_bias_,
                                                transition_->probs(), ctx);
  }
  throw ContractError("unhandled equal-time kind");
}

Var Model::forward(Tape& tape, const EqualTimeBatch& batch, const ForwardContext& ctx) const {
  return backbone_->forward(tape, represent(tape, batch, ctx), batch.step_mask, ctx);
}

Tensor Model::predict(const EqualTimeBatch& batch) const {
  Tape tape;
  return probabilities(forward(tape, batch).value(), spec_.task);
}

Tensor probabilities(const Tensor& logits, TaskKind task) {
  Tensor out(logits.shape());
  if (task == TaskKind::kMultilabel) {
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    return out;
  }
  const std::size_t v = logits.dim(logits.rank() - 1);
  for (std::size_t r = 0; r < logits.size() / v; ++r) {
    double mx = logits[r * v];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits[r * v + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += (out[r * v + j] = std::exp(logits[r * v + j] - mx));
    for (std::size_t j = 0; j < v; ++j) out[r * v + j] /= sum;
  }
  return out;
}

}  // namespace eqtime

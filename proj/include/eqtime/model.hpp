#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "eqtime/backbone.hpp"
#include "eqtime/equal_time.hpp"
#include "eqtime/transition.hpp"

namespace eqtime {

/// Declarative U-V model description: equal-time layer U feeding sequence backbone V.
struct ModelSpec {
  EqualTimeKind equal_time = EqualTimeKind::kAverage;
  BackboneKind backbone = BackboneKind::kLstm;
  TaskKind task = TaskKind::kMultilabel;
  std::size_t features = 0;  // M
  std::size_t outputs = 1;   // classes or vocabulary size
  /// Rows of a trainable type-embedding table added to event features; 0 disables it.
  std::size_t type_embedding = 0;

  // Equal-time layer.
  std::size_t set_hidden = 8;       // LSTM-set hidden size H
  std::size_t set_attention = 8;    // LSTM-set attention width A
  std::size_t set_iterations = 0;   // 0 iterates once per live event
  double set_init = 0.0;            // constant initial q*
  std::size_t set_heads = 2;
  std::size_t set_blocks = 1;
  std::size_t set_ff = 16;
  SetPooling set_pooling = SetPooling::kMean;

  // Sequence backbone.
  std::size_t hidden = 16;
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t ff = 32;
  double dropout = 0.0;

  /// "avg-lstm", "trans-trans-T" and so on.
  std::string name() const;
  /// Sets the U and V fields from a model name; throws ConfigError on unknown names.
  ModelSpec& with_name(std::string_view model_name);
  bool needs_transition() const { return equal_time == EqualTimeKind::kTransformerSetTransition; }
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

/// The five combinations benchmarked in the literature plus the transition variant.
inline constexpr std::string_view kModelNames[] = {"avg-lstm",    "ds-lstm",     "lstm-lstm",
                                                   "trans-lstm",  "trans-trans", "trans-trans-T"};

class Model {
 public:
  /// Initialises parameters from `seed`. The transition variant requires `transition`.
  static Model compose(const ModelSpec& spec, std::uint64_t seed,
                       std::shared_ptr<const TransitionMatrix> transition = nullptr);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Step representations [B, T, M] from the equal-time stage.
  Var represent(Tape& tape, const EqualTimeBatch& batch, const ForwardContext& ctx = {}) const;
  /// Logits: [B, C] for multilabel, [B, T, V] for next-token.
  Var forward(Tape& tape, const EqualTimeBatch& batch, const ForwardContext& ctx = {}) const;
  /// Probabilities with the same shape as the logits (sigmoid or softmax).
  Tensor predict(const EqualTimeBatch& batch) const;

  const ModelSpec& spec() const { return spec_; }
  ParameterStore& params() { return *params_; }
  const ParameterStore& params() const { return *params_; }
  const std::shared_ptr<const TransitionMatrix>& transition() const { return transition_; }

  // Direct access for tests.
  const DeepSetParams* deep_set() const { return deep_set_ ? &*deep_set_ : nullptr; }
  const LstmSetParams* lstm_set() const { return lstm_set_ ? &*lstm_set_ : nullptr; }
  const SetAttentionParams* set_attention() const { return set_attention_ ? &*set_attention_ : nullptr; }
  const TransitionBiasParams* transition_bias() const { return transition_bias_ ? &*transition_bias_ : nullptr; }

 private:
  Model() = default;

  ModelSpec spec_;
  std::unique_ptr<ParameterStore> params_;
  std::shared_ptr<const TransitionMatrix> transition_;
  Parameter* type_table_ = nullptr;
  std::optional<DeepSetParams> deep_set_;
  std::optional<LstmSetParams> lstm_set_;
  std::optional<SetAttentionParams> set_attention_;
  std::optional<TransitionBiasParams> transition_bias_;
  std::optional<Backbone> backbone_;
};

/// Sigmoid of multilabel logits or softmax over the last axis of next-token logits.
Tensor probabilities(const Tensor& logits, TaskKind task);

}  // namespace eqtime

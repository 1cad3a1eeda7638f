#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "eqtime/autodiff.hpp"
#include "eqtime/layers.hpp"

namespace eqtime {

/// Padded batch of partially ordered sequences: B sequences of T steps, each
/// step holding up to N events of dimension M.
struct EqualTimeBatch {
  Tensor events;               // [B, T, N, M]
  Mask event_mask;             // [B, T, N]
  Mask step_mask;              // [B, T]
  std::vector<int> type_ids;   // B*T*N, -1 exactly on padded slots

  std::size_t batch() const { return events.dim(0); }
  std::size_t steps() const { return events.dim(1); }
  std::size_t slots() const { return events.dim(2); }
  std::size_t features() const { return events.dim(3); }

  /// Throws ContractError when masks, type ids and shapes disagree.
  void validate() const;
};

enum class EqualTimeKind { kAverage, kDeepSet, kLstmSet, kTransformerSet, kTransformerSetTransition };

std::string_view to_string(EqualTimeKind kind);
EqualTimeKind parse_equal_time_kind(std::string_view text);

struct DeepSetParams {
  Parameter* weight = nullptr;  // [M, M]

  static DeepSetParams create(ParameterStore& store, const std::string& prefix, std::size_t features, Rng& rng);
};

/// Read-process recurrence over a set. The LSTM consumes q*_{t-1} = [q, r]
/// directly, so the cell carries no separate recurrent weight matrix.
struct LstmSetParams {
  LstmCellParams cell;               // input H+M, hidden H
  Parameter* attn_w = nullptr;       // [A, M+H], columns ordered [event, query]
  Parameter* attn_v = nullptr;       // [A]
  Parameter* init_state = nullptr;   // [H+M], not trainable
  Parameter* projection = nullptr;   // [M, H+M]
  std::size_t features = 0;
  /// 0 iterates once per live event; otherwise a fixed count for every set.
  std::size_t fixed_iterations = 0;

  static LstmSetParams create(ParameterStore& store, const std::string& prefix, std::size_t features,
                              std::size_t hidden, std::size_t attention_dim, double init_value, Rng& rng);
};

enum class SetPooling { kMean, kLearnedQuery };

struct SetAttentionParams {
  std::vector<AttentionBlockParams> blocks;
  SetPooling pooling = SetPooling::kMean;
  Parameter* pool_query = nullptr;  // [M], learned-query pooling only

  static SetAttentionParams create(ParameterStore& store, const std::string& prefix, std::size_t features,
                                   std::size_t heads, std::size_t ff_dim, std::size_t blocks, SetPooling pooling,
                                   Rng& rng);
};

/// Per block and head: offset b and embedding u of the scalar transition
/// probability. Both start at zero, so a fresh model matches the plain set
/// transformer exactly.
struct TransitionBiasParams {
  std::vector<Parameter*> offsets;  // per block, [heads, dh]
  std::vector<Parameter*> embeds;   // per block, [heads, dh]

  static TransitionBiasParams create(ParameterStore& store, const std::string& prefix,
                                     const SetAttentionParams& attention);
};

// All forwards take events as a [B, T, N, M] value and return [B, T, M].
// Steps with a single live event return that event unchanged; padded steps
// return zeros.

Var avg_set_forward(Tape& tape, Var events, const EqualTimeBatch& batch);
Var deep_set_forward(Tape& tape, Var events, const EqualTimeBatch& batch, const DeepSetParams& params);
Var lstm_set_forward(Tape& tape, Var events, const EqualTimeBatch& batch, const LstmSetParams& params);
Var transformer_set_forward(Tape& tape, Var events, const EqualTimeBatch& batch, const SetAttentionParams& params,
                            const ForwardContext& ctx = {});
/// `transition` is K×K with entry [from, to]; key i contributes
/// transition[type_i, type_j] to query j.
Var transformer_set_transition_forward(Tape& tape, Var events, const EqualTimeBatch& batch,
                                       const SetAttentionParams& params, const TransitionBiasParams& bias,
                                       const Tensor& transition, const ForwardContext& ctx = {});

}  // namespace eqtime

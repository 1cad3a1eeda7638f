#pragma once

#include <string_view>
#include <vector>

#include "eqtime/autodiff.hpp"
#include "eqtime/layers.hpp"

namespace eqtime {

enum class BackboneKind { kLstm, kTransformer };
enum class TaskKind { kMultilabel, kNextToken };

std::string_view to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(std::string_view text);
std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::kLstm;
  std::size_t input_dim = 0;
  std::size_t hidden = 16;  // LSTM hidden size or transformer model dim
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t ff_dim = 32;
  TaskKind task = TaskKind::kMultilabel;
  std::size_t outputs = 1;  // classes for multilabel, vocabulary size for next-token
  double dropout = 0.0;

  void validate() const;
};

/// Sequence model over [B, T, M] step representations. Multilabel heads
/// return [B, C] logits; next-token heads return [B, T, V] logits.
class Backbone {
 public:
  static Backbone create(const BackboneSpec& spec, ParameterStore& store, const std::string& prefix, Rng& rng);

  Var forward(Tape& tape, Var reps, const Mask& step_mask, const ForwardContext& ctx = {}) const;

  const BackboneSpec& spec() const { return spec_; }

 private:
  Var lstm_forward(Tape& tape, Var reps, const Mask& step_mask, const ForwardContext& ctx) const;
  Var transformer_forward(Tape& tape, Var reps, const Mask& step_mask, const ForwardContext& ctx) const;

  BackboneSpec spec_;
  std::vector<LstmCellParams> lstm_layers_;
  DenseParams input_proj_;
  std::vector<AttentionBlockParams> blocks_;
  DenseParams head_;
};

/// Sinusoidal position table [T, D]; positions index time steps.
Tensor sinusoidal_positions(std::size_t steps, std::size_t dim);

}  // namespace eqtime

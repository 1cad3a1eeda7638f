#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "eqtime/autodiff.hpp"

namespace eqtime {

using Rng = std::mt19937_64;

/// Glorot-uniform initialised [rows, cols] parameter.
Parameter& add_weight(ParameterStore& store, const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
Parameter& add_vector(ParameterStore& store, const std::string& name, std::size_t n, double fill = 0.0,
                      bool trainable = true);

/// Forward-pass switches that differ between training and evaluation.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

/// Inverted dropout; identity outside training or at rate 0.
Var dropout(Var x, const ForwardContext& ctx);

/// Dense x·Wᵀ + b with W stored [out, in].
struct DenseParams {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static DenseParams create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                            Rng& rng);
  Var apply(Tape& tape, Var x) const;
};

/// LSTM cell. `w_hidden` is null for cells whose recurrent state is fed back
/// through the input, as in the set-level read-process loop.
struct LstmCellParams {
  Parameter* w_input = nullptr;   // [4H, In]
  Parameter* w_hidden = nullptr;  // [4H, H] or null
  Parameter* bias = nullptr;      // [4H]
  std::size_t hidden = 0;

  static LstmCellParams create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                               bool recurrent_weights, Rng& rng);
};

struct LstmState {
  Var h;
  Var c;
};

/// One step given precomputed gate pre-activations [R, 4H] (input part plus bias).
LstmState lstm_step(Tape& tape, const LstmCellParams& cell, Var gate_pre, const LstmState& prev);

/// Parameters of one multi-head self-attention block followed by a
/// position-wise feed-forward sublayer, each with residual and layer norm.
struct AttentionBlockParams {
  std::size_t model_dim = 0;
  std::size_t heads = 1;
  Parameter* w_q = nullptr;  // [D, heads*dh]
  Parameter* w_k = nullptr;
  Parameter* w_v = nullptr;
  Parameter* w_o = nullptr;  // [D, heads*dh]
  Parameter* ln1_gain = nullptr;
  Parameter* ln1_offset = nullptr;
  DenseParams ff1;
  DenseParams ff2;
  Parameter* ln2_gain = nullptr;
  Parameter* ln2_offset = nullptr;

  std::size_t head_dim() const { return model_dim / heads; }

  static AttentionBlockParams create(ParameterStore& store, const std::string& prefix, std::size_t model_dim,
                                     std::size_t heads, std::size_t ff_dim, Rng& rng);
};

/// Additive per-head term on the attention weights:
///   weight[j,i] += (q_j + b_h)·u_h * pair_scale[r,j,i]
/// applied after the softmax and without renormalisation.
struct PairBias {
  Parameter* offset = nullptr;  // b, [heads, dh]
  Parameter* embed = nullptr;   // u, [heads, dh]
  const Tensor* pair_scale = nullptr;  // [R, L, L], zero wherever key i is masked
};

/// x: [R, L, D]; mask: [R, L, L] with mask[r,j,i] live when query j may attend key i.
Var attention_block(Tape& tape, const AttentionBlockParams& p, Var x, const Mask& mask,
                    const PairBias* bias = nullptr, const ForwardContext& ctx = {});

}  // namespace eqtime

#include "eqtime/layers.hpp"

#include <cmath>

#include "eqtime/error.hpp"

namespace eqtime {

Parameter& add_weight(ParameterStore& store, const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w({rows, cols});
  for (double& v : w.data()) v = dist(rng);
  return store.add(name, std::move(w));
}

Parameter& add_vector(ParameterStore& store, const std::string& name, std::size_t n, double fill, bool trainable) {
  return store.add(name, Tensor({n}, fill), trainable);
}

Var dropout(Var x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0) return x;
  if (!ctx.rng) throw ContractError("dropout in training mode needs an rng");
  const double keep = 1.0 - ctx.dropout;
  std::bernoulli_distribution draw(keep);
  Tensor m(x.shape());
  for (double& v : m.data()) v = draw(*ctx.rng) ? 1.0 / keep : 0.0;
  return ops::mul(x, x.tape->constant(std::move(m)));
}

DenseParams DenseParams::create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                                Rng& rng) {
  DenseParams d;
  d.weight = &add_weight(store, prefix + ".weight", out, in, rng);
  d.bias = &add_vector(store, prefix + ".bias", out);
  return d;
}

Var DenseParams::apply(Tape& tape, Var x) const {
  return ops::add_bias(ops::matmul(x, tape.param(*weight), true), tape.param(*bias));
}

LstmCellParams LstmCellParams::create(ParameterStore& store, const std::string& prefix, std::size_t in,
                                      std::size_t hidden, bool recurrent_weights, Rng& rng) {
  LstmCellParams c;
  c.hidden = hidden;
  c.w_input = &add_weight(store, prefix + ".w_input", 4 * hidden, in, rng);
  if (recurrent_weights) c.w_hidden = &add_weight(store, prefix + ".w_hidden", 4 * hidden, hidden, rng);
  Tensor b({4 * hidden}, 0.0);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;  // forget gate
  c.bias = &store.add(prefix + ".bias", std::move(b));
  return c;
}

LstmState lstm_step(Tape& tape, const LstmCellParams& cell, Var gate_pre, const LstmState& prev) {
  using namespace ops;
  Var pre = gate_pre;
  if (cell.w_hidden) pre = add(pre, matmul(prev.h, tape.param(*cell.w_hidden), true));
  const std::size_t h = cell.hidden;
  Var i = sigmoid(slice(pre, 1, 0, h));
  Var f = sigmoid(slice(pre, 1, h, h));
  Var g = tanh(slice(pre, 1, 2 * h, h));
  Var o = sigmoid(slice(pre, 1, 3 * h, h));
  Var c = add(mul(f, prev.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

AttentionBlockParams AttentionBlockParams::create(ParameterStore& store, const std::string& prefix,
                                                  std::size_t model_dim, std::size_t heads, std::size_t ff_dim,
                                                  Rng& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("attention: model dim " + std::to_string(model_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  AttentionBlockParams p;
  p.model_dim = model_dim;
  p.heads = heads;
  p.w_q = &add_weight(store, prefix + ".w_q", model_dim, model_dim, rng);
  p.w_k = &add_weight(store, prefix + ".w_k", model_dim, model_dim, rng);
  p.w_v = &add_weight(store, prefix + ".w_v", model_dim, model_dim, rng);
  p.w_o = &add_weight(store, prefix + ".w_o", model_dim, model_dim, rng);
  p.ln1_gain = &add_vector(store, prefix + ".ln1.gain", model_dim, 1.0);
  p.ln1_offset = &add_vector(store, prefix + ".ln1.offset", model_dim, 0.0);
  p.ff1 = DenseParams::create(store, prefix + ".ff1", model_dim, ff_dim, rng);
  p.ff2 = DenseParams::create(store, prefix + ".ff2", ff_dim, model_dim, rng);
  p.ln2_gain = &add_vector(store, prefix + ".ln2.gain", model_dim, 1.0);
  p.ln2_offset = &add_vector(store, prefix + ".ln2.offset", model_dim, 0.0);
  return p;
}

Var attention_block(Tape& tape, const AttentionBlockParams& p, Var x, const Mask& mask, const PairBias* bias,
                    const ForwardContext& ctx) {
  using namespace ops;
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != p.model_dim) {
    throw DimensionError("attention_block: input " + shape_string(s) + " for model dim " + std::to_string(p.model_dim));
  }
  const std::size_t rows = s[0];
  const std::size_t len = s[1];
  if (mask.shape != Shape{rows, len, len}) {
    throw DimensionError("attention_block: mask " + shape_string(mask.shape) + " for input " + shape_string(s));
  }
  const std::size_t dh = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Projections are stored [D, heads*dh] and applied as x·W.
  Var q = matmul(x, tape.param(*p.w_q));
  Var k = matmul(x, tape.param(*p.w_k));
  Var v = matmul(x, tape.param(*p.w_v));

  Var pair_scale;
  Var bias_offset;
  Var bias_embed;
  if (bias) {
    if (bias->pair_scale->shape() != mask.shape) {
      throw DimensionError("attention_block: pair scale " + shape_string(bias->pair_scale->shape()) + " for mask " +
                           shape_string(mask.shape));
    }
    pair_scale = tape.constant(*bias->pair_scale);
    bias_offset = tape.param(*bias->offset);
    bias_embed = tape.param(*bias->embed);
  }

  std::vector<Var> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var qh = slice(q, 2, h * dh, dh);
    Var kh = slice(k, 2, h * dh, dh);
    Var vh = slice(v, 2, h * dh, dh);
    Var weights = masked_softmax(scale(matmul(qh, kh, true), inv_sqrt), mask);
    if (bias) {
      Var b = reshape(slice(bias_offset, 0, h, 1), {dh});
      Var u = reshape(slice(bias_embed, 0, h, 1), {dh, 1});
      Var score = matmul(add_bias(qh, b), u);  // [R, L, 1], one scalar per query
      weights = add(weights, mul(pair_scale, expand(score, 2, len)));
    }
    heads.push_back(matmul(weights, vh));
  }
  Var attended = heads.size() == 1 ? heads[0] : concat(heads, 2);
  attended = dropout(matmul(attended, tape.param(*p.w_o), true), ctx);
  Var z = layer_norm(add(x, attended), tape.param(*p.ln1_gain), tape.param(*p.ln1_offset));
  Var ff = dropout(p.ff2.apply(tape, tanh(p.ff1.apply(tape, z))), ctx);
  return layer_norm(add(z, ff), tape.param(*p.ln2_gain), tape.param(*p.ln2_offset));
}

}  // namespace eqtime

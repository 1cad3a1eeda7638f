#include "eqtime/backbone.hpp"

#include <cmath>
#include <string>

#include "eqtime/error.hpp"

namespace eqtime {

std::string_view to_string(BackboneKind kind) { return kind == BackboneKind::kLstm ? "lstm" : "trans"; }

BackboneKind parse_backbone_kind(std::string_view text) {
  if (text == "lstm" || text == "LSTM") return BackboneKind::kLstm;
  if (text == "trans") return BackboneKind::kTransformer;
  throw ConfigError("unknown sequence backbone '" + std::string(text) + "' (expected lstm or trans)");
}

std::string_view to_string(TaskKind kind) { return kind == TaskKind::kMultilabel ? "multilabel" : "next_token"; }

TaskKind parse_task_kind(std::string_view text) {
  if (text == "multilabel") return TaskKind::kMultilabel;
  if (text == "next_token") return TaskKind::kNextToken;
  throw ConfigError("unknown task '" + std::string(text) + "' (expected multilabel or next_token)");
}

void BackboneSpec::validate() const {
  if (input_dim == 0 || hidden == 0 || layers == 0) throw ConfigError("backbone dimensions must be positive");
  if (kind == BackboneKind::kTransformer && (heads == 0 || hidden % heads != 0)) {
    throw ConfigError("transformer backbone dim " + std::to_string(hidden) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (task == TaskKind::kMultilabel && outputs < 1) throw ConfigError("multilabel head needs at least one class");
  if (task == TaskKind::kNextToken && outputs < 2) throw ConfigError("next-token head needs a vocabulary of at least 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

Tensor sinusoidal_positions(std::size_t steps, std::size_t dim) {
  Tensor pe({steps, dim});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      pe[t * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Backbone Backbone::create(const BackboneSpec& spec, ParameterStore& store, const std::string& prefix, Rng& rng) {
  spec.validate();
  Backbone b;
  b.spec_ = spec;
  if (spec.kind == BackboneKind::kLstm) {
    for (std::size_t l = 0; l < spec.layers; ++l) {
      const std::size_t in = l == 0 ? spec.input_dim : spec.hidden;
      b.lstm_layers_.push_back(
          LstmCellParams::create(store, prefix + ".lstm" + std::to_string(l), in, spec.hidden, true, rng));
    }
  } else {
    b.input_proj_ = DenseParams::create(store, prefix + ".input", spec.input_dim, spec.hidden, rng);
    for (std::size_t l = 0; l < spec.layers; ++l) {
      b.blocks_.push_back(AttentionBlockParams::create(store, prefix + ".block" + std::to_string(l), spec.hidden,
                                                       spec.heads, spec.ff_dim, rng));
    }
  }
  b.head_ = DenseParams::create(store, prefix + ".head", spec.hidden, spec.outputs, rng);
  return b;
}

Var Backbone::forward(Tape& tape, Var reps, const Mask& step_mask, const ForwardContext& ctx) const {
  const Shape& s = reps.shape();
  if (s.size() != 3 || s[2] != spec_.input_dim) {
    throw DimensionError("backbone: representations " + shape_string(s) + " for input dim " +
                         std::to_string(spec_.input_dim));
  }
  if (step_mask.shape != Shape{s[0], s[1]}) {
    throw DimensionError("backbone: step mask " + shape_string(step_mask.shape) + " for " + shape_string(s));
  }
  return spec_.kind == BackboneKind::kLstm ? lstm_forward(tape, reps, step_mask, ctx)
                                           : transformer_forward(tape, reps, step_mask, ctx);
}

Var Backbone::lstm_forward(Tape& tape, Var reps, const Mask& step_mask, const ForwardContext& ctx) const {
  using namespace ops;
  const std::size_t batch = reps.shape()[0];
  const std::size_t steps = reps.shape()[1];
  const std::size_t h = spec_.hidden;

  std::vector<Mask> live(steps, Mask({batch}, false));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b) live[t].live[b] = step_mask.live[b * steps + t];

  Var input = reps;
  std::vector<Var> outputs;
  for (const LstmCellParams& cell : lstm_layers_) {
    // Input projections for every step at once: [B, T, 4H].
    Var pre_all = add_bias(matmul(input, tape.param(*cell.w_input), true), tape.param(*cell.bias));
    LstmState state{tape.constant(Tensor({batch, h}, 0.0)), tape.constant(Tensor({batch, h}, 0.0))};
    outputs.clear();
    for (std::size_t t = 0; t < steps; ++t) {
      Var pre = reshape(slice(pre_all, 1, t, 1), {batch, 4 * h});
      LstmState next = lstm_step(tape, cell, pre, state);
      // Padded steps carry the previous state through unchanged.
      state.h = select(live[t], next.h, state.h);
      state.c = select(live[t], next.c, state.c);
      outputs.push_back(reshape(state.h, {batch, 1, h}));
    }
    input = dropout(steps == 1 ? outputs[0] : concat(outputs, 1), ctx);
  }
  if (spec_.task == TaskKind::kMultilabel) {
    Var last = reshape(slice(input, 1, steps - 1, 1), {batch, h});
    return head_.apply(tape, last);
  }
  return head_.apply(tape, input);
}

Var Backbone::transformer_forward(Tape& tape, Var reps, const Mask& step_mask, const ForwardContext& ctx) const {
  using namespace ops;
  const std::size_t batch = reps.shape()[0];
  const std::size_t steps = reps.shape()[1];
  const std::size_t d = spec_.hidden;
  const bool causal = spec_.task == TaskKind::kNextToken;

  Tensor pe = sinusoidal_positions(steps, d);
  Tensor pe_batch({batch, steps, d});
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(pe.data().data(), steps * d, pe_batch.data().data() + b * steps * d);
  Var x = dropout(add(input_proj_.apply(tape, reps), tape.constant(std::move(pe_batch))), ctx);

  Mask mask({batch, steps, steps}, false);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      bool any = false;
      for (std::size_t u = 0; u < steps; ++u) {
        const bool on = step_mask.live[b * steps + u] && (!causal || u <= t);
        mask.live[(b * steps + t) * steps + u] = on;
        any = any || on;
      }
      // A padded query row with nothing visible attends to itself; its output is never read.
      if (!any) mask.live[(b * steps + t) * steps + t] = 1;
    }
  }
  for (const AttentionBlockParams& blk : blocks_) x = attention_block(tape, blk, x, mask, nullptr, ctx);

  if (spec_.task == TaskKind::kMultilabel) {
    Mask rows({batch, steps}, step_mask.live);
    return head_.apply(tape, reduce_mean(x, 1, &rows));
  }
  return head_.apply(tape, x);
}

}  // namespace eqtime

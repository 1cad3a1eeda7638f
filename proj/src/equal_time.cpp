#include "eqtime/equal_time.hpp"

#include <algorithm>
#include <cmath>

#include "eqtime/error.hpp"

namespace eqtime {

void EqualTimeBatch::validate() const {
  if (events.rank() != 4) throw ContractError("equal-time batch: events must be [B,T,N,M], got " + shape_string(events.shape()));
  const std::size_t b = batch(), t = steps(), n = slots();
  if (event_mask.shape != Shape{b, t, n}) throw ContractError("equal-time batch: event mask " + shape_string(event_mask.shape));
  if (step_mask.shape != Shape{b, t}) throw ContractError("equal-time batch: step mask " + shape_string(step_mask.shape));
  if (type_ids.size() != b * t * n) throw ContractError("equal-time batch: type id count " + std::to_string(type_ids.size()));
  for (std::size_t s = 0; s < b * t; ++s) {
    std::size_t live = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool on = event_mask[s * n + j];
      live += on ? 1 : 0;
      if (on != (type_ids[s * n + j] >= 0)) {
        throw ContractError("equal-time batch: type id " + std::to_string(type_ids[s * n + j]) +
                            " disagrees with event mask at step " + std::to_string(s));
      }
    }
    if (step_mask[s] && live == 0) throw ContractError("equal-time batch: live step " + std::to_string(s) + " has no events");
    if (!step_mask[s] && live != 0) throw ContractError("equal-time batch: padded step " + std::to_string(s) + " has events");
  }
}

std::string_view to_string(EqualTimeKind kind) {
  switch (kind) {
    case EqualTimeKind::kAverage: return "avg";
    case EqualTimeKind::kDeepSet: return "ds";
    case EqualTimeKind::kLstmSet: return "lstm";
    case EqualTimeKind::kTransformerSet: return "trans";
    case EqualTimeKind::kTransformerSetTransition: return "trans-T";
  }
  return "?";
}

EqualTimeKind parse_equal_time_kind(std::string_view text) {
  if (text == "avg") return EqualTimeKind::kAverage;
  if (text == "ds") return EqualTimeKind::kDeepSet;
  if (text == "lstm" || text == "LSTM") return EqualTimeKind::kLstmSet;
  if (text == "trans") return EqualTimeKind::kTransformerSet;
  if (text == "trans-T" || text == "trans_t") return EqualTimeKind::kTransformerSetTransition;
  throw ConfigError("unknown equal-time layer '" + std::string(text) + "' (expected avg, ds, lstm, trans, trans-T)");
}

DeepSetParams DeepSetParams::create(ParameterStore& store, const std::string& prefix, std::size_t features, Rng& rng) {
  return {&add_weight(store, prefix + ".weight", features, features, rng)};
}

LstmSetParams LstmSetParams::create(ParameterStore& store, const std::string& prefix, std::size_t features,
                                    std::size_t hidden, std::size_t attention_dim, double init_value, Rng& rng) {
  LstmSetParams p;
  p.features = features;
  p.cell = LstmCellParams::create(store, prefix + ".cell", hidden + features, hidden, false, rng);
  p.attn_w = &add_weight(store, prefix + ".attn_w", attention_dim, features + hidden, rng);
  p.attn_v = &add_weight(store, prefix + ".attn_v", attention_dim, 1, rng);
  p.attn_v->value = p.attn_v->value.reshaped({attention_dim});
  p.attn_v->grad = Tensor({attention_dim}, 0.0);
  p.init_state = &add_vector(store, prefix + ".init_state", hidden + features, init_value, false);
  p.projection = &add_weight(store, prefix + ".projection", features, hidden + features, rng);
  return p;
}

SetAttentionParams SetAttentionParams::create(ParameterStore& store, const std::string& prefix, std::size_t features,
                                              std::size_t heads, std::size_t ff_dim, std::size_t blocks,
                                              SetPooling pooling, Rng& rng) {
  if (blocks < 1 || blocks > 2) throw ConfigError("set transformer depth must be 1 or 2, got " + std::to_string(blocks));
  SetAttentionParams p;
  p.pooling = pooling;
  for (std::size_t i = 0; i < blocks; ++i) {
    p.blocks.push_back(
        AttentionBlockParams::create(store, prefix + ".block" + std::to_string(i), features, heads, ff_dim, rng));
  }
  if (pooling == SetPooling::kLearnedQuery) {
    p.pool_query = &add_weight(store, prefix + ".pool_query", features, 1, rng);
    p.pool_query->value = p.pool_query->value.reshaped({features});
    p.pool_query->grad = Tensor({features}, 0.0);
  }
  return p;
}

TransitionBiasParams TransitionBiasParams::create(ParameterStore& store, const std::string& prefix,
                                                  const SetAttentionParams& attention) {
  TransitionBiasParams p;
  for (std::size_t i = 0; i < attention.blocks.size(); ++i) {
    const auto& blk = attention.blocks[i];
    const std::string name = prefix + ".block" + std::to_string(i);
    p.offsets.push_back(&store.add(name + ".b", Tensor({blk.heads, blk.head_dim()}, 0.0)));
    p.embeds.push_back(&store.add(name + ".u", Tensor({blk.heads, blk.head_dim()}, 0.0)));
  }
  return p;
}

namespace {

/// Row-flattened view of a batch: R = B*T sets of N slots.
struct SetRows {
  std::size_t rows = 0;
  std::size_t slots = 0;
  std::size_t features = 0;
  Mask live;        // [R, N]
  Mask safe;        // [R, N]; padded rows get slot 0 switched on so reductions stay defined
  Mask multi;       // [R]; steps with two or more live events
  std::vector<std::size_t> counts;
  std::size_t max_count = 0;
  bool any_multi = false;
};

SetRows describe(const EqualTimeBatch& batch, const Shape& events_shape) {
  if (events_shape != batch.events.shape()) {
    throw DimensionError("equal-time forward: events " + shape_string(events_shape) + " for batch " +
                         shape_string(batch.events.shape()));
  }
  SetRows s;
  s.rows = batch.batch() * batch.steps();
  s.slots = batch.slots();
  s.features = batch.features();
  s.live = Mask({s.rows, s.slots}, batch.event_mask.live);
  s.safe = s.live;
  s.multi = Mask({s.rows}, false);
  s.counts.assign(s.rows, 0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < s.slots; ++j) n += s.live.live[r * s.slots + j];
    s.counts[r] = n;
    if (n == 0 && s.slots > 0) s.safe.live[r * s.slots] = 1;
    if (n >= 2) {
      s.multi.live[r] = 1;
      s.any_multi = true;
      s.max_count = std::max(s.max_count, n);
    }
  }
  return s;
}

/// Multi-event rows take `computed`; singleton rows pass their event through
/// and padded rows give zeros, both via the masked sum.
Var finish(const SetRows& s, const EqualTimeBatch& batch, Var x, const Var* computed) {
  Var bypass = ops::reduce_sum(x, 1, &s.live);
  Var out = computed ? ops::select(s.multi, *computed, bypass) : bypass;
  return ops::reshape(out, {batch.batch(), batch.steps(), s.features});
}

Var flatten(Var events, const SetRows& s) { return ops::reshape(events, {s.rows, s.slots, s.features}); }

Mask attention_mask(const SetRows& s) {
  Mask m({s.rows, s.slots, s.slots}, false);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t j = 0; j < s.slots; ++j)
      for (std::size_t i = 0; i < s.slots; ++i) m.live[(r * s.slots + j) * s.slots + i] = s.safe.live[r * s.slots + i];
  return m;
}

Var pool(Tape& tape, Var y, const SetRows& s, const SetAttentionParams& params) {
  using namespace ops;
  if (params.pooling == SetPooling::kMean) return reduce_mean(y, 1, &s.safe);
  Var q = reshape(tape.param(*params.pool_query), {s.features, 1});
  Var scores = scale(reshape(matmul(y, q), {s.rows, s.slots}), 1.0 / std::sqrt(static_cast<double>(s.features)));
  Var w = reshape(masked_softmax(scores, s.safe), {s.rows, 1, s.slots});
  return reshape(matmul(w, y), {s.rows, s.features});
}

Var set_transformer(Tape& tape, Var events, const EqualTimeBatch& batch, const SetAttentionParams& params,
                    const TransitionBiasParams* bias, const Tensor* transition, const ForwardContext& ctx) {
  const SetRows s = describe(batch, events.shape());
  Var x = flatten(events, s);
  if (!s.any_multi) return finish(s, batch, x, nullptr);

  Tensor pair_scale;
  if (bias) {
    if (transition->rank() != 2 || transition->dim(0) != transition->dim(1)) {
      throw DimensionError("transition matrix must be square, got " + shape_string(transition->shape()));
    }
    const std::size_t k = transition->dim(0);
    pair_scale = Tensor({s.rows, s.slots, s.slots}, 0.0);
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t j = 0; j < s.slots; ++j) {
        if (!s.live[r * s.slots + j]) continue;
        const int tj = batch.type_ids[r * s.slots + j];
        for (std::size_t i = 0; i < s.slots; ++i) {
          if (!s.live[r * s.slots + i]) continue;
          const int ti = batch.type_ids[r * s.slots + i];
          for (int id : {ti, tj}) {
            if (id < 0 || static_cast<std::size_t>(id) >= k) {
              throw UnknownTypeError("event type id " + std::to_string(id) + " outside transition matrix of " +
                                     std::to_string(k) + " types");
            }
          }
          pair_scale[(r * s.slots + j) * s.slots + i] =
              (*transition)[static_cast<std::size_t>(ti) * k + static_cast<std::size_t>(tj)];
        }
      }
    }
  }

  const Mask mask = attention_mask(s);
  Var y = x;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    if (bias) {
      const PairBias pb{bias->offsets[b], bias->embeds[b], &pair_scale};
      y = attention_block(tape, params.blocks[b], y, mask, &pb, ctx);
    } else {
      y = attention_block(tape, params.blocks[b], y, mask, nullptr, ctx);
    }
  }
  Var pooled = pool(tape, y, s, params);
  return finish(s, batch, x, &pooled);
}

}  // namespace

Var avg_set_forward(Tape&, Var events, const EqualTimeBatch& batch) {
  const SetRows s = describe(batch, events.shape());
  Var x = flatten(events, s);
  if (!s.any_multi) return finish(s, batch, x, nullptr);
  Var mean = ops::reduce_mean(x, 1, &s.safe);
  return finish(s, batch, x, &mean);
}

Var deep_set_forward(Tape& tape, Var events, const EqualTimeBatch& batch, const DeepSetParams& params) {
  const SetRows s = describe(batch, events.shape());
  Var x = flatten(events, s);
  if (!s.any_multi) return finish(s, batch, x, nullptr);
  Var mapped = ops::matmul(x, tape.param(*params.weight), true);  // W·e per event
  Var mean = ops::reduce_mean(mapped, 1, &s.safe);
  return finish(s, batch, x, &mean);
}

Var lstm_set_forward(Tape& tape, Var events, const EqualTimeBatch& batch, const LstmSetParams& params) {
  using namespace ops;
  const SetRows s = describe(batch, events.shape());
  Var x = flatten(events, s);
  if (!s.any_multi) return finish(s, batch, x, nullptr);

  const std::size_t m = s.features;
  const std::size_t h = params.cell.hidden;
  const std::size_t iterations = params.fixed_iterations ? params.fixed_iterations : s.max_count;
  const std::size_t attn = params.attn_w->value.dim(0);

  Var w = tape.param(*params.attn_w);
  Var w_event = slice(w, 1, 0, m);
  Var w_query = slice(w, 1, m, h);
  Var v = reshape(tape.param(*params.attn_v), {attn, 1});
  Var w_in = tape.param(*params.cell.w_input);
  Var b_in = tape.param(*params.cell.bias);
  Var event_part = matmul(x, w_event, true);  // [R, N, A], fixed across iterations

  Tensor init({s.rows, h + m});
  for (std::size_t r = 0; r < s.rows; ++r)
    std::copy_n(params.init_state->value.data().data(), h + m, init.data().data() + r * (h + m));
  Var qstar = tape.constant(std::move(init));
  LstmState state{Var{}, tape.constant(Tensor({s.rows, h}, 0.0))};

  for (std::size_t it = 1; it <= iterations; ++it) {
    Mask active({s.rows}, false);
    for (std::size_t r = 0; r < s.rows; ++r)
      active.live[r] = s.multi.live[r] && (params.fixed_iterations || it <= s.counts[r]);

    LstmState next = lstm_step(tape, params.cell, add_bias(matmul(qstar, w_in, true), b_in), state);
    Var q = next.h;
    Var query_part = expand(reshape(matmul(q, w_query, true), {s.rows, 1, attn}), 1, s.slots);
    Var scores = reshape(matmul(tanh(add(event_part, query_part)), v), {s.rows, s.slots});
    Var weights = reshape(masked_softmax(scores, s.safe), {s.rows, 1, s.slots});
    Var read = reshape(matmul(weights, x), {s.rows, m});
    Var next_qstar = concat({q, read}, 1);
    qstar = select(active, next_qstar, qstar);
    state.c = select(active, next.c, state.c);
  }
  Var out = matmul(qstar, tape.param(*params.projection), true);
  return finish(s, batch, x, &out);
}

Var transformer_set_forward(Tape& tape, Var events, const EqualTimeBatch& batch, const SetAttentionParams& params,
                            const ForwardContext& ctx) {
  return set_transformer(tape, events, batch, params, nullptr, nullptr, ctx);
}

Var transformer_set_transition_forward(Tape& tape, Var events, const EqualTimeBatch& batch,
                                       const SetAttentionParams& params, const TransitionBiasParams& bias,
                                       const Tensor& transition, const ForwardContext& ctx) {
  return set_transformer(tape, events, batch, params, &bias, &transition, ctx);
}

}  // namespace eqtime

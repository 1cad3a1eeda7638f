#include <gtest/gtest.h>

#include "eqtime/equal_time.hpp"
#include "eqtime/error.hpp"
#include "layer_fixture.hpp"

using namespace eqtime;
using namespace eqtime::testing;

namespace {

// Single sequence, single step holding the given events.
EqualTimeBatch one_step(const std::vector<std::vector<double>>& events, std::vector<bool> live = {}) {
  const std::size_t n = events.size(), m = events[0].size();
  if (live.empty()) live.assign(n, true);
  EqualTimeBatch b;
  b.events = Tensor({1, 1, n, m});
  b.event_mask = Mask({1, 1, n}, false);
  b.step_mask = Mask({1, 1}, true);
  b.type_ids.assign(n, -1);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t f = 0; f < m; ++f) b.events[j * m + f] = events[j][f];
    b.event_mask.live[j] = live[j];
    if (live[j]) b.type_ids[j] = static_cast<int>(j % 2);
  }
  return b;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(AvgSet, Examples) {
  Rng rng(1);
  SetLayer avg(EqualTimeKind::kAverage, 2, 2, rng);
  EXPECT_EQ(avg.run(one_step({{1, 0}, {0, 1}})), Tensor({1, 1, 2}, std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(avg.run(one_step({{7, -2}})), Tensor({1, 1, 2}, std::vector<double>{7, -2}));
  EXPECT_EQ(avg.run(one_step({{1, 0}, {0, 1}, {9, 9}}, {true, true, false})),
            Tensor({1, 1, 2}, std::vector<double>{0.5, 0.5}));
}

TEST(DeepSet, Examples) {
  Rng rng(1);
  SetLayer ds(EqualTimeKind::kDeepSet, 2, 2, rng);
  ds.ds->weight->value = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(ds.run(one_step({{1, 0}, {0, 1}})), Tensor({1, 1, 2}, std::vector<double>{0.5, 0.5}));
  ds.ds->weight->value = Tensor::matrix({{2, 0}, {0, 2}});
  EXPECT_EQ(ds.run(one_step({{1, 1}, {3, 1}})), Tensor({1, 1, 2}, std::vector<double>{4, 2}));
  EXPECT_EQ(ds.run(one_step({{3, 1}, {1, 1}})), Tensor({1, 1, 2}, std::vector<double>{4, 2}));
}

TEST(DeepSet, AppliesWeightBeforeAveraging) {
  Rng rng(2);
  SetLayer ds(EqualTimeKind::kDeepSet, 3, 2, rng);
  const auto b = one_step({{0.3, -1, 2}, {1, 0.5, -0.2}, {-0.7, 0.1, 0.9}});
  const Tensor out = ds.run(b);
  const Tensor& w = ds.ds->weight->value;
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 3; ++c) s += w[r * 3 + c] * b.events[j * 3 + c];
    EXPECT_NEAR(out[r], s / 3.0, 1e-14);
  }
}

TEST(SetLayers, SingletonBypassIsExact) {
  Rng rng(4);
  for (EqualTimeKind kind : kAllSetKinds) {
    SetLayer layer(kind, 4, 4, rng);
    const auto b = random_batch(rng, {3, 4, 3, 4, 4, true});
    const Tensor out = layer.run(b);
    for (std::size_t row = 0; row < 12; ++row) {
      std::size_t live = 0;
      for (std::size_t j = 0; j < 3; ++j) live += b.event_mask[row * 3 + j];
      for (std::size_t f = 0; f < 4; ++f) {
        if (!b.step_mask[row]) EXPECT_EQ(out[row * 4 + f], 0.0) << to_string(kind);
        else if (live == 1) EXPECT_EQ(out[row * 4 + f], b.events[row * 12 + f]) << to_string(kind);
      }
    }
  }
}

TEST(SetLayers, PermutationInvariance) {
  Rng rng(6);
  for (EqualTimeKind kind : {EqualTimeKind::kAverage, EqualTimeKind::kDeepSet, EqualTimeKind::kLstmSet,
                             EqualTimeKind::kTransformerSet}) {
    SetLayer layer(kind, 4, 4, rng);
    for (int trial = 0; trial < 20; ++trial) {
      const auto b = random_batch(rng, {2, 3, 4, 4, 4, true});
      EXPECT_LT(max_abs_diff(layer.run(b), layer.run(permute_events(b, rng))), 1e-9) << to_string(kind);
    }
  }
}

TEST(SetLayers, PaddingChangesNothing) {
  Rng rng(8);
  for (EqualTimeKind kind : kAllSetKinds) {
    SetLayer layer(kind, 4, 4, rng);
    const auto b = random_batch(rng, {2, 3, 3, 4, 4, true});
    const auto padded = pad_batch(b, 0, 2, 3.5);
    const Tensor out = layer.run(b), out2 = layer.run(padded);
    EXPECT_LT(max_abs_diff(out, out2), 1e-12) << to_string(kind);
  }
}

TEST(SetLayers, GradientsMatchFiniteDifferences) {
  Rng rng(10);
  for (EqualTimeKind kind : kAllSetKinds) {
    for (int draw = 0; draw < 5; ++draw) {
      SetLayer layer(kind, 4, 4, rng, draw % 2 + 1);
      const auto b = random_batch(rng, {2, 3, 3, 4, 4, true});
      ParameterStore inputs;
      Parameter& events = inputs.add("events", b.events);
      const Tensor w = random_tensor({2, 3, 4}, rng);
      auto params = trainable(layer.store);
      params.push_back(&events);
      const auto report = check_gradients(params, [&](Tape& t) { return project(layer.forward(t, t.param(events), b), w); });
      EXPECT_LT(report.max_relative_error, 1e-4) << to_string(kind) << " worst " << report.worst;
    }
  }
}

TEST(LstmSet, InitialStateIsConstant) {
  Rng rng(3);
  SetLayer layer(EqualTimeKind::kLstmSet, 4, 4, rng);
  EXPECT_FALSE(layer.lstm->init_state->trainable);
  for (double v : layer.lstm->init_state->value.data()) EXPECT_EQ(v, 0.1);
}

TEST(LstmSet, FixedIterationCountChangesMultiEventSteps) {
  Rng rng(12);
  SetLayer layer(EqualTimeKind::kLstmSet, 4, 4, rng);
  const auto b = random_batch(rng, {1, 1, 3, 4, 4, false});
  const Tensor by_count = layer.run(b);
  layer.lstm->fixed_iterations = 3;
  EXPECT_EQ(layer.run(b), by_count);
  layer.lstm->fixed_iterations = 5;
  EXPECT_GT(max_abs_diff(layer.run(b), by_count), 1e-9);
}

TEST(SetTransformer, LearnedQueryPoolingIsPermutationInvariant) {
  Rng rng(14);
  SetLayer layer(EqualTimeKind::kTransformerSet, 4, 4, rng, 2, SetPooling::kLearnedQuery);
  for (int trial = 0; trial < 10; ++trial) {
    const auto b = random_batch(rng, {2, 3, 4, 4, 4, true});
    EXPECT_LT(max_abs_diff(layer.run(b), layer.run(permute_events(b, rng))), 1e-9);
  }
}

TEST(SetTransformer, RejectsIndivisibleHeadsAndDepth) {
  Rng rng(1);
  ParameterStore s;
  EXPECT_THROW(SetAttentionParams::create(s, "a", 5, 2, 4, 1, SetPooling::kMean, rng), ConfigError);
  EXPECT_THROW(SetAttentionParams::create(s, "b", 4, 2, 4, 3, SetPooling::kMean, rng), ConfigError);
  EXPECT_THROW(SetAttentionParams::create(s, "c", 4, 2, 4, 0, SetPooling::kMean, rng), ConfigError);
}

TEST(TransitionAttention, VanishingBiasIsBitIdenticalToPlain) {
  Rng rng(16);
  SetLayer layer(EqualTimeKind::kTransformerSetTransition, 4, 4, rng);
  const auto b = random_batch(rng, {3, 4, 4, 4, 4, true});
  auto plain = [&] {
    Tape t;
    return transformer_set_forward(t, t.constant(b.events), b, *layer.attn).value();
  };
  const Tensor biased = layer.run(b);
  EXPECT_GT(max_abs_diff(biased, plain()), 1e-6);

  const Tensor saved = layer.transition;
  layer.transition.fill(0.0);
  EXPECT_EQ(layer.run(b), plain());
  layer.transition = saved;
  for (Parameter* u : layer.bias->embeds) u->value.fill(0.0);
  EXPECT_EQ(layer.run(b), plain());
}

TEST(TransitionAttention, FollowsEventsUnderPermutationButReadsTheirTypes) {
  Rng rng(17);
  SetLayer layer(EqualTimeKind::kTransformerSetTransition, 4, 4, rng);
  int type_sensitive = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = random_batch(rng, {2, 2, 4, 4, 4, false});
    const Tensor out = layer.run(b);
    // Moving whole events (features with their types) leaves the pooled output unchanged.
    EXPECT_LT(max_abs_diff(out, layer.run(permute_events(b, rng))), 1e-9);
    if (max_abs_diff(out, layer.run(swap_types(b, rng))) > 1e-6) ++type_sensitive;
  }
  EXPECT_GE(type_sensitive, 95);
}

TEST(TransitionAttention, MatchesDirectEvaluation) {
  // Independent single-head, single-step evaluation of the biased weights.
  Rng rng(18);
  const std::size_t M = 4, n = 3;
  ParameterStore store;
  SetAttentionParams attn = SetAttentionParams::create(store, "t", M, 1, 6, 1, SetPooling::kMean, rng);
  TransitionBiasParams bias = TransitionBiasParams::create(store, "t.tr", attn);
  randomize(*bias.offsets[0], rng);
  randomize(*bias.embeds[0], rng);
  const Tensor T = random_stochastic(3, rng);
  auto b = one_step({{0.2, -0.5, 0.9, 0.1}, {-0.3, 0.8, 0.4, -0.6}, {0.7, 0.1, -0.2, 0.5}});
  b.type_ids = {2, 0, 1};
  Tape tape;
  const Tensor got = transformer_set_transition_forward(tape, tape.constant(b.events), b, attn, bias, T).value();

  const auto& blk = attn.blocks[0];
  auto mat = [&](const Tensor& w, const double* x, std::size_t j) {  // (x·W)[j], W stored [D, D]
    double s = 0.0;
    for (std::size_t c = 0; c < M; ++c) s += x[c] * w[c * M + j];
    return s;
  };
  std::vector<std::vector<double>> q(n, std::vector<double>(M)), k = q, v = q;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      q[i][j] = mat(blk.w_q->value, &b.events[i * M], j);
      k[i][j] = mat(blk.w_k->value, &b.events[i * M], j);
      v[i][j] = mat(blk.w_v->value, &b.events[i * M], j);
    }
  const double scale = 1.0 / std::sqrt(static_cast<double>(M));
  std::vector<std::vector<double>> ctx(n, std::vector<double>(M, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> s(n);
    double mx = -1e300, z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = 0.0;
      for (std::size_t c = 0; c < M; ++c) s[i] += q[j][c] * k[i][c];
      s[i] *= scale;
      mx = std::max(mx, s[i]);
    }
    for (double& x : s) z += (x = std::exp(x - mx));
    double qbu = 0.0;
    for (std::size_t c = 0; c < M; ++c) qbu += (q[j][c] + bias.offsets[0]->value[c]) * bias.embeds[0]->value[c];
    for (std::size_t i = 0; i < n; ++i) {
      const double w = s[i] / z + qbu * T[static_cast<std::size_t>(b.type_ids[i]) * 3 + b.type_ids[j]];
      for (std::size_t c = 0; c < M; ++c) ctx[j][c] += w * v[i][c];
    }
  }
  auto layer_norm = [&](std::vector<double> x, const Parameter* g, const Parameter* o) {
    double mu = 0.0, var = 0.0;
    for (double e : x) mu += e;
    mu /= M;
    for (double e : x) var += (e - mu) * (e - mu);
    var /= M;
    for (std::size_t c = 0; c < M; ++c) x[c] = (x[c] - mu) / std::sqrt(var + 1e-5) * g->value[c] + o->value[c];
    return x;
  };
  std::vector<double> pooled(M, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> h(M);
    for (std::size_t c = 0; c < M; ++c) {
      double o = 0.0;
      for (std::size_t d = 0; d < M; ++d) o += ctx[j][d] * blk.w_o->value[c * M + d];
      h[c] = b.events[j * M + c] + o;
    }
    h = layer_norm(h, blk.ln1_gain, blk.ln1_offset);
    const std::size_t F = blk.ff1.bias->value.size();
    std::vector<double> f(F);
    for (std::size_t a = 0; a < F; ++a) {
      double s = blk.ff1.bias->value[a];
      for (std::size_t c = 0; c < M; ++c) s += blk.ff1.weight->value[a * M + c] * h[c];
      f[a] = std::tanh(s);
    }
    std::vector<double> h2(M);
    for (std::size_t c = 0; c < M; ++c) {
      double s = blk.ff2.bias->value[c];
      for (std::size_t a = 0; a < F; ++a) s += blk.ff2.weight->value[c * F + a] * f[a];
      h2[c] = h[c] + s;
    }
    h2 = layer_norm(h2, blk.ln2_gain, blk.ln2_offset);
    for (std::size_t c = 0; c < M; ++c) pooled[c] += h2[c] / n;
  }
  for (std::size_t c = 0; c < M; ++c) EXPECT_NEAR(got[c], pooled[c], 1e-12);
}

TEST(TransitionAttention, UnknownTypeIsRejected) {
  Rng rng(20);
  SetLayer layer(EqualTimeKind::kTransformerSetTransition, 4, 3, rng);
  auto b = random_batch(rng, {1, 2, 3, 4, 3, false});
  b.type_ids[1] = 3;
  EXPECT_THROW(layer.run(b), UnknownTypeError);
}

TEST(EqualTimeBatch, ValidateRejectsInconsistentMasks) {
  Rng rng(22);
  auto b = random_batch(rng, {1, 2, 2, 3, 3, false});
  b.validate();
  auto bad = b;
  bad.type_ids[0] = -1;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = b;
  bad.step_mask.live[1] = 0;
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(EqualTimeKind, ParseNames) {
  EXPECT_EQ(parse_equal_time_kind("avg"), EqualTimeKind::kAverage);
  EXPECT_EQ(parse_equal_time_kind("ds"), EqualTimeKind::kDeepSet);
  EXPECT_EQ(parse_equal_time_kind("LSTM"), EqualTimeKind::kLstmSet);
  EXPECT_EQ(parse_equal_time_kind("trans"), EqualTimeKind::kTransformerSet);
  EXPECT_THROW(parse_equal_time_kind("gru"), ConfigError);
}

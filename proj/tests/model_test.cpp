#include <gtest/gtest.h>

#include "eqtime/backbone.hpp"
#include "eqtime/error.hpp"
#include "eqtime/model.hpp"
#include "layer_fixture.hpp"

using namespace eqtime;
using namespace eqtime::testing;

namespace {

std::shared_ptr<const TransitionMatrix> random_matrix(std::size_t known_types, Rng& rng) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < known_types; ++i) labels.push_back("t" + std::to_string(i));
  const std::size_t k = known_types + 1;
  std::vector<std::uint64_t> counts(k * k);
  std::uniform_int_distribution<std::uint64_t> c(1, 20);
  for (auto& v : counts) v = c(rng);
  return std::make_shared<TransitionMatrix>(TypeVocab(labels), counts, 0.0);
}

ModelSpec small_spec(std::string_view name, TaskKind task, std::size_t outputs) {
  ModelSpec s;
  s.with_name(name);
  s.task = task;
  s.features = 4;
  s.outputs = outputs;
  s.set_hidden = 4;
  s.set_attention = 3;
  s.set_heads = 2;
  s.set_ff = 6;
  s.hidden = 4;
  s.heads = 2;
  s.ff = 6;
  return s;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(Backbone, ZeroWeightsGiveHalfProbabilities) {
  for (BackboneKind kind : {BackboneKind::kLstm, BackboneKind::kTransformer}) {
    ParameterStore store;
    Rng rng(1);
    Backbone bb = Backbone::create({kind, 4, 4, 1, 2, 6, TaskKind::kMultilabel, 3, 0.0}, store, "seq", rng);
    for (std::size_t i = 0; i < store.size(); ++i)
      if (store[i].name.find("head") != std::string::npos) store[i].value.fill(0.0);
    Tape tape;
    const Tensor reps = random_tensor({2, 3, 4}, rng);
    const Tensor logits = bb.forward(tape, tape.constant(reps), Mask({2, 3}, true)).value();
    EXPECT_EQ(logits.shape(), (Shape{2, 3}));
    for (double v : logits.data()) EXPECT_EQ(v, 0.0);
    const Tensor probs = probabilities(logits, TaskKind::kMultilabel);
    for (double p : probs.data()) EXPECT_EQ(p, 0.5);
  }
}

TEST(Backbone, LstmUsesFinalLiveStateAndSkipsPadding) {
  ParameterStore store;
  Rng rng(2);
  Backbone bb = Backbone::create({BackboneKind::kLstm, 4, 5, 2, 1, 6, TaskKind::kMultilabel, 2, 0.0}, store, "seq", rng);
  const Tensor reps = random_tensor({1, 3, 4}, rng);
  Tensor padded({1, 5, 4}, 123.0);
  std::copy_n(reps.data().data(), 12, padded.data().data());
  Tape t1, t2;
  const Tensor a = bb.forward(t1, t1.constant(reps), Mask({1, 3}, true)).value();
  const Tensor b = bb.forward(t2, t2.constant(padded), Mask({1, 5}, std::vector<std::uint8_t>{1, 1, 1, 0, 0})).value();
  EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-12);
}

TEST(Backbone, SingleStepTransformerAppliesHeadToThatStep) {
  ParameterStore store;
  Rng rng(3);
  Backbone bb = Backbone::create({BackboneKind::kTransformer, 4, 4, 1, 2, 6, TaskKind::kMultilabel, 2, 0.0}, store,
                                 "seq", rng);
  const Tensor one = random_tensor({1, 1, 4}, rng);
  Tensor two({1, 2, 4}, -5.0);
  std::copy_n(one.data().data(), 4, two.data().data());
  Tape t1, t2;
  const Tensor a = bb.forward(t1, t1.constant(one), Mask({1, 1}, true)).value();
  const Tensor b = bb.forward(t2, t2.constant(two), Mask({1, 2}, std::vector<std::uint8_t>{1, 0})).value();
  EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-12);
}

TEST(Backbone, NextTokenIsCausal) {
  Rng rng(4);
  for (BackboneKind kind : {BackboneKind::kLstm, BackboneKind::kTransformer}) {
    ParameterStore store;
    Backbone bb = Backbone::create({kind, 4, 4, 2, 2, 6, TaskKind::kNextToken, 5, 0.0}, store, "seq", rng);
    const Tensor reps = random_tensor({2, 6, 4}, rng);
    const Mask live({2, 6}, true);
    Tape t0;
    const Tensor base = bb.forward(t0, t0.constant(reps), live).value();
    ASSERT_EQ(base.shape(), (Shape{2, 6, 5}));
    for (std::size_t t = 0; t < 5; ++t) {
      Tensor changed = reps;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t s = t + 1; s < 6; ++s)
          for (std::size_t f = 0; f < 4; ++f) changed[(b * 6 + s) * 4 + f] += 0.75;
      Tape tc;
      const Tensor out = bb.forward(tc, tc.constant(changed), live).value();
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t s = 0; s <= t; ++s)
          for (std::size_t v = 0; v < 5; ++v) EXPECT_EQ(out[(b * 6 + s) * 5 + v], base[(b * 6 + s) * 5 + v]);
      EXPECT_GT(max_abs_diff(out.data(), base.data()), 1e-9);
    }
  }
}

TEST(Backbone, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (BackboneKind kind : {BackboneKind::kLstm, BackboneKind::kTransformer}) {
    for (TaskKind task : {TaskKind::kMultilabel, TaskKind::kNextToken}) {
      for (int draw = 0; draw < 3; ++draw) {
        ParameterStore store;
        Backbone bb = Backbone::create({kind, 4, 4, 2, 2, 6, task, 3, 0.0}, store, "seq", rng);
        ParameterStore inputs;
        Parameter& reps = inputs.add("reps", random_tensor({2, 3, 4}, rng));
        const Mask live({2, 3}, std::vector<std::uint8_t>{1, 1, 0, 1, 1, 1});
        const Tensor w = random_tensor(task == TaskKind::kMultilabel ? Shape{2, 3} : Shape{2, 3, 3}, rng);
        auto params = trainable(store);
        params.push_back(&reps);
        const auto report =
            check_gradients(params, [&](Tape& t) { return project(bb.forward(t, t.param(reps), live), w); });
        EXPECT_LT(report.max_relative_error, 1e-4) << to_string(kind) << "/" << to_string(task) << " " << report.worst;
      }
    }
  }
}

TEST(Backbone, SpecValidation) {
  EXPECT_THROW((BackboneSpec{BackboneKind::kTransformer, 4, 5, 1, 2, 6, TaskKind::kMultilabel, 1, 0.0}.validate()),
               ConfigError);
  EXPECT_THROW((BackboneSpec{BackboneKind::kLstm, 4, 4, 1, 2, 6, TaskKind::kNextToken, 1, 0.0}.validate()), ConfigError);
  EXPECT_THROW((BackboneSpec{BackboneKind::kLstm, 4, 4, 1, 2, 6, TaskKind::kMultilabel, 2, 1.0}.validate()), ConfigError);
  EXPECT_EQ(parse_backbone_kind("trans"), BackboneKind::kTransformer);
  EXPECT_EQ(parse_task_kind("next_token"), TaskKind::kNextToken);
  EXPECT_THROW(parse_backbone_kind("gru"), ConfigError);
}

TEST(Positions, SinusoidalTable) {
  const Tensor pe = sinusoidal_positions(3, 4);
  EXPECT_EQ(pe.at({0, 0}), 0.0);
  EXPECT_EQ(pe.at({0, 1}), 1.0);
  EXPECT_NEAR(pe.at({2, 0}), std::sin(2.0), 1e-15);
  EXPECT_NEAR(pe.at({2, 3}), std::cos(2.0 / 100.0), 1e-15);
}

TEST(Model, NamesRoundTrip) {
  for (std::string_view name : kModelNames) {
    ModelSpec s;
    EXPECT_EQ(s.with_name(name).name(), name);
  }
  ModelSpec s;
  EXPECT_THROW(s.with_name("gru-lstm"), ConfigError);
  EXPECT_THROW(s.with_name("avg-lstm-T"), ConfigError);
  EXPECT_THROW(s.with_name("avg"), ConfigError);
}

TEST(Model, ComposeSelectsStages) {
  Rng rng(6);
  auto matrix = random_matrix(3, rng);
  const Model avg = Model::compose(small_spec("avg-lstm", TaskKind::kMultilabel, 2), 1);
  EXPECT_EQ(avg.spec().equal_time, EqualTimeKind::kAverage);
  EXPECT_EQ(avg.deep_set(), nullptr);
  const Model tt = Model::compose(small_spec("trans-trans", TaskKind::kMultilabel, 2), 1);
  EXPECT_NE(tt.set_attention(), nullptr);
  EXPECT_EQ(tt.transition_bias(), nullptr);
  EXPECT_THROW(Model::compose(small_spec("trans-trans-T", TaskKind::kMultilabel, 2), 1), ConfigError);
  const Model ttt = Model::compose(small_spec("trans-trans-T", TaskKind::kMultilabel, 2), 1, matrix);
  EXPECT_NE(ttt.transition_bias(), nullptr);
}

TEST(Model, TransitionVariantStartsAtPlainParameters) {
  Rng rng(7);
  auto matrix = random_matrix(3, rng);
  const Model plain = Model::compose(small_spec("trans-trans", TaskKind::kMultilabel, 2), 9);
  const Model biased = Model::compose(small_spec("trans-trans-T", TaskKind::kMultilabel, 2), 9, matrix);
  for (std::size_t i = 0; i < plain.params().size(); ++i) {
    EXPECT_EQ(plain.params()[i].name, biased.params()[i].name);
    EXPECT_EQ(plain.params()[i].value, biased.params()[i].value);
  }
  auto b = random_batch(rng, {3, 4, 3, 4, 4, true});
  Tape t1, t2;
  EXPECT_EQ(plain.forward(t1, b).value(), biased.forward(t2, b).value());
}

TEST(Model, PaddingInvarianceForAllModels) {
  Rng rng(8);
  auto matrix = random_matrix(3, rng);
  for (std::string_view name : kModelNames) {
    for (TaskKind task : {TaskKind::kMultilabel, TaskKind::kNextToken}) {
      Model m = Model::compose(small_spec(name, task, 3), 3, matrix);
      for (std::size_t i = 0; i < m.params().size(); ++i) randomize(m.params()[i], rng, -0.5, 0.5);
      const auto b = random_batch(rng, {2, 3, 3, 4, 4, true});
      const auto padded = pad_batch(b, 2, 2, 0.0);
      Tape t1, t2;
      const Tensor a = m.forward(t1, b).value(), p = m.forward(t2, padded).value();
      if (task == TaskKind::kMultilabel) {
        EXPECT_LT(max_abs_diff(a.data(), p.data()), 1e-12) << name;
      } else {
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t t = 0; t < 3; ++t)
            if (b.step_mask[i * 3 + t])
              EXPECT_LT(max_abs_diff(std::span(a.data().data() + (i * 3 + t) * 3, 3),
                                     std::span(p.data().data() + (i * 5 + t) * 3, 3)),
                        1e-12)
                  << name;
      }
    }
  }
}

TEST(Model, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  auto matrix = random_matrix(3, rng);
  for (std::string_view name : kModelNames) {
    Model m = Model::compose(small_spec(name, TaskKind::kMultilabel, 2), 4, matrix);
    for (std::size_t i = 0; i < m.params().size(); ++i) randomize(m.params()[i], rng, -0.5, 0.5);
    const auto b = random_batch(rng, {2, 3, 3, 4, 4, true});
    const Tensor w = random_tensor({2, 2}, rng);
    const auto report =
        check_gradients(trainable(m.params()), [&](Tape& t) { return project(m.forward(t, b), w); });
    EXPECT_LT(report.max_relative_error, 1e-4) << name << " " << report.worst;
  }
}

TEST(Model, TypeEmbeddingMustMatchMatrix) {
  Rng rng(10);
  auto matrix = random_matrix(3, rng);
  auto s = small_spec("trans-trans-T", TaskKind::kNextToken, 4);
  s.type_embedding = 5;
  EXPECT_THROW(Model::compose(s, 1, matrix), ConfigError);
  s.type_embedding = 4;
  EXPECT_NO_THROW(Model::compose(s, 1, matrix));
}

TEST(Model, ForwardRejectsFeatureMismatch) {
  Rng rng(11);
  const Model m = Model::compose(small_spec("ds-lstm", TaskKind::kMultilabel, 2), 1);
  const auto b = random_batch(rng, {1, 2, 2, 3, 3, false});
  Tape t;
  EXPECT_THROW(m.forward(t, b), DimensionError);
}

TEST(Model, SameSeedSameParameters) {
  for (std::string_view name : kModelNames) {
    Rng rng(12);
    auto matrix = random_matrix(3, rng);
    const Model a = Model::compose(small_spec(name, TaskKind::kMultilabel, 2), 77, matrix);
    const Model b = Model::compose(small_spec(name, TaskKind::kMultilabel, 2), 77, matrix);
    for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
  }
}

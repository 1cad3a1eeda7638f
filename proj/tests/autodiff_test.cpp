#include <gtest/gtest.h>

#include <cmath>

#include "eqtime/autodiff.hpp"
#include "eqtime/error.hpp"
#include "support.hpp"

using namespace eqtime;
using eqtime::testing::check_gradients;
using eqtime::testing::random_tensor;

namespace {

// Direct evaluation of a softmax over a fully live row.
std::vector<double> softmax_oracle(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double s = 0.0;
  std::vector<double> out;
  for (double v : x) {
    out.push_back(std::exp(v - mx));
    s += out.back();
  }
  for (double& v : out) v /= s;
  return out;
}

double numeric_derivative(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST(Tensor, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(shape_string(t.shape()), "[2,3]");
  EXPECT_THROW(t.reshaped({4}), DimensionError);
}

TEST(Matmul, Examples) {
  Tape tape;
  Var id = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var col = tape.constant(Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(ops::matmul(id, col).value(), Tensor::matrix({{3}, {4}}));
  Var row = tape.constant(Tensor::matrix({{1, 2}}));
  EXPECT_EQ(ops::matmul(row, col).value().item(), 11.0);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  ParameterStore store;
  Parameter& a = store.add("a", Tensor::matrix({{1, 2}}));
  const Tensor b = Tensor::matrix({{3}, {4}});
  auto f = [&](Tape& t) { return ops::sum_all(ops::matmul(t.param(a), t.constant(b))); };
  {
    Tape t;
    t.backward(f(t));
  }
  const double h = 1e-6;
  for (std::size_t k = 0; k < 2; ++k) {
    const double orig = a.value[k];
    auto eval = [&](double x) {
      a.value[k] = x;
      Tape t;
      const double v = f(t).value().item();
      a.value[k] = orig;
      return v;
    };
    EXPECT_NEAR(a.grad[k], numeric_derivative(eval, orig, h), 1e-8);
  }
  EXPECT_EQ(a.grad, Tensor::matrix({{3, 4}}));
}

TEST(Matmul, InnerMismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 2}));
  try {
    ops::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,2]"), std::string::npos);
  }
}

TEST(MaskedSoftmax, Examples) {
  Tape tape;
  auto run = [&](std::vector<double> x, std::initializer_list<bool> mask) {
    const std::size_t n = x.size();
    return ops::masked_softmax(tape.constant(Tensor({n}, std::move(x))), Mask::from(mask)).value();
  };
  EXPECT_EQ(run({0, 0}, {true, true}), Tensor::vector({0.5, 0.5}));
  EXPECT_EQ(run({5, -1000}, {true, false}), Tensor::vector({1, 0}));
  const Tensor out = run({1, 2, 3}, {true, true, true});
  const auto oracle = softmax_oracle({1, 2, 3});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[i], oracle[i], 1e-15);
  EXPECT_NEAR(out[0], 0.09003, 5e-6);
  EXPECT_NEAR(out[1], 0.24473, 5e-6);
  EXPECT_NEAR(out[2], 0.66524, 5e-6);
}

TEST(MaskedSoftmax, FullyMaskedRowIsDegenerate) {
  Tape tape;
  Var x = tape.constant(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_THROW(ops::masked_softmax(x, Mask({2, 2}, std::vector<std::uint8_t>{1, 1, 0, 0})), DegenerateRowError);
}

TEST(MaskedSoftmax, RowsSumToOneAndMaskedEntriesGetNoGradient) {
  Rng rng(3);
  ParameterStore store;
  Parameter& x = store.add("x", random_tensor({5, 6}, rng, -30, 30));
  std::vector<std::uint8_t> live(30);
  std::bernoulli_distribution coin(0.6);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 6; ++c) live[r * 6 + c] = coin(rng);
    live[r * 6 + r] = 1;
  }
  const Mask mask({5, 6}, live);
  const Tensor w = random_tensor({5, 6}, rng);
  Tape tape;
  Var y = ops::masked_softmax(tape.param(x), mask);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      s += y.value()[r * 6 + c];
      if (!live[r * 6 + c]) EXPECT_EQ(y.value()[r * 6 + c], 0.0);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  tape.backward(eqtime::testing::project(y, w));
  for (std::size_t k = 0; k < 30; ++k)
    if (!live[k]) EXPECT_EQ(x.grad[k], 0.0);
}

TEST(Elementwise, Examples) {
  Tape tape;
  EXPECT_EQ(ops::tanh(tape.constant(Tensor::scalar(0))).value().item(), 0.0);
  EXPECT_EQ(ops::sigmoid(tape.constant(Tensor::scalar(0))).value().item(), 0.5);
  EXPECT_THROW(ops::add(tape.constant(Tensor({2})), tape.constant(Tensor({3}))), DimensionError);
  EXPECT_THROW(ops::mul(tape.constant(Tensor({2})), tape.constant(Tensor({2, 1}))), DimensionError);
}

TEST(Elementwise, TanhDerivative) {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::scalar(0.7));
  Tape tape;
  tape.backward(ops::tanh(tape.param(x)));
  const double fd = numeric_derivative([](double v) { return std::tanh(v); }, 0.7, 1e-5);
  EXPECT_NEAR(x.grad.item(), fd, 1e-9);
  EXPECT_NEAR(x.grad.item(), 1.0 - std::tanh(0.7) * std::tanh(0.7), 1e-15);
}

TEST(Concat, Examples) {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1}));
  Var b = tape.constant(Tensor::vector({2}));
  EXPECT_EQ(ops::concat({a, b}, 0).value(), Tensor::vector({1, 2}));
  Var q = tape.constant(Tensor::vector({1, 2}));
  Var r = tape.constant(Tensor::vector({3}));
  EXPECT_EQ(ops::concat({q, r}, 0).value(), Tensor::vector({1, 2, 3}));
  EXPECT_THROW(ops::concat({tape.constant(Tensor({2, 2})), tape.constant(Tensor({2, 3}))}, 0), DimensionError);
}

TEST(Concat, BackwardSplitsOnes) {
  ParameterStore store;
  Parameter& a = store.add("a", Tensor({2, 3}, 0.5));
  Parameter& b = store.add("b", Tensor({2, 1}, -2.0));
  Tape tape;
  tape.backward(ops::sum_all(ops::concat({tape.param(a), tape.param(b)}, 1)));
  EXPECT_EQ(a.grad, Tensor({2, 3}, 1.0));
  EXPECT_EQ(b.grad, Tensor({2, 1}, 1.0));
}

TEST(Reduce, Examples) {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::vector({2, 4}));
  Tape tape;
  Var m = ops::reduce_mean(tape.param(x), 0);
  EXPECT_EQ(m.value().item(), 3.0);
  tape.backward(m);
  EXPECT_EQ(x.grad[0], 0.5);

  Tape t2;
  const Mask mask = Mask::from({true, true, false});
  EXPECT_EQ(ops::reduce_mean(t2.constant(Tensor::vector({2, 4, 100})), 0, &mask).value().item(), 3.0);
  const Mask none = Mask::from({false, false});
  EXPECT_THROW(ops::reduce_mean(t2.constant(Tensor::vector({1, 2})), 0, &none), DegenerateRowError);
}

TEST(Backward, Examples) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::scalar(3.0));
  {
    Tape tape;
    tape.backward(tape.param(p));
    EXPECT_EQ(p.grad.item(), 1.0);
  }
  p.grad.fill(0.0);
  {
    Tape tape;
    Var v = tape.param(p);
    tape.backward(ops::mul(v, v));
    EXPECT_EQ(p.grad.item(), 6.0);
  }
}

TEST(Backward, AccumulatesUntilZeroed) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::scalar(2.0));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(ops::scale(tape.param(p), 3.0));
  }
  EXPECT_EQ(p.grad.item(), 6.0);
  store.zero_grad();
  EXPECT_EQ(p.grad.item(), 0.0);
}

TEST(Backward, ContractViolations) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({2}, 1.0));
  Tape tape;
  Var v = tape.param(p);
  EXPECT_THROW(tape.backward(v), ContractError);
  Var s = ops::sum_all(v);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), ContractError);
  EXPECT_THROW(store.add("p", Tensor::scalar(0)), ContractError);
}

TEST(Backward, FrozenLeavesReceiveNothing) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::scalar(2.0));
  Tape tape;
  tape.backward(ops::mul(tape.frozen(p), tape.frozen(p)));
  EXPECT_EQ(p.grad.item(), 0.0);
}

TEST(Gradients, PrimitivesMatchFiniteDifferences) {
  Rng rng(11);
  for (int draw = 0; draw < 20; ++draw) {
    ParameterStore s;
    Parameter& a = s.add("a", random_tensor({2, 3, 4}, rng));
    Parameter& b = s.add("b", random_tensor({4, 5}, rng));
    Parameter& c = s.add("c", random_tensor({2, 3, 5}, rng));
    Parameter& g = s.add("g", random_tensor({5}, rng));
    Parameter& o = s.add("o", random_tensor({5}, rng));
    Parameter& table = s.add("table", random_tensor({4, 3}, rng));
    const Tensor w = random_tensor({2, 3, 5}, rng);
    std::vector<std::uint8_t> live(30);
    std::bernoulli_distribution coin(0.7);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t k = 0; k < 5; ++k) live[r * 5 + k] = coin(rng);
      live[r * 5] = 1;
    }
    const Mask mask({2, 3, 5}, live);
    const Mask rows({2, 3}, std::vector<std::uint8_t>{1, 0, 1, 1, 1, 0});
    const std::vector<int> ids{0, 3, -1, 2, 1, 1};
    const std::vector<int> targets{4, 0, 2, 1, 3, 0};
    const Tensor bce_targets = random_tensor({2, 5}, rng, 0.0, 1.0);

    auto loss = [&](Tape& t) {
      Var x = ops::matmul(t.param(a), t.param(b));                   // [2,3,5]
      x = ops::add(ops::tanh(x), ops::sigmoid(t.param(c)));
      x = ops::layer_norm(x, t.param(g), t.param(o));
      Var sm = ops::masked_softmax(ops::scale(x, 1.7), mask);
      Var mixed = ops::mul(sm, ops::sub(x, t.param(c)));
      Var cat = ops::concat({mixed, ops::slice(x, 2, 1, 3)}, 2);     // [2,3,8]
      Var emb = ops::embedding(t.param(table), ids, {2, 3});         // [2,3,3]
      Var e = ops::reduce_sum(ops::mul(emb, ops::slice(cat, 2, 0, 3)), 2);
      Var sel = ops::select(rows, ops::matmul(mixed, t.param(b), true), ops::slice(cat, 2, 4, 4));
      Var pooled = ops::reduce_mean(x, 1, &rows);                    // [2,5]
      Var bce = ops::bce_with_logits(ops::add_bias(pooled, t.param(o)), bce_targets);
      Var ce = ops::cross_entropy(x, targets, rows);
      Var ex = ops::expand(ops::reshape(ops::reduce_sum(x, 2), {2, 3, 1}), 2, 4);
      return ops::add(ops::add(ops::add(eqtime::testing::project(x, w), ops::sum_all(e)),
                               ops::add(ops::sum_all(ops::mul(sel, ex)), bce)),
                      ce);
    };
    const auto report = check_gradients({&a, &b, &c, &g, &o, &table}, loss);
    EXPECT_LT(report.max_relative_error, 1e-4) << "draw " << draw << " worst " << report.worst;
  }
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Rng rng(5);
  const Tensor a = random_tensor({3, 7, 5}, rng);
  const Tensor b = random_tensor({5, 4}, rng);
  auto run = [&] {
    Tape t;
    return ops::masked_softmax(ops::matmul(t.constant(a), t.constant(b)), Mask({3, 7, 4}, true)).value();
  };
  EXPECT_EQ(run(), run());
}

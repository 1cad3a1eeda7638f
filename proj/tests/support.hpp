#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eqtime/autodiff.hpp"
#include "eqtime/equal_time.hpp"
#include "eqtime/layers.hpp"

namespace eqtime::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline void randomize(Parameter& p, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : p.value.data()) v = u(rng);
}

struct BatchShape {
  std::size_t batch = 2;
  std::size_t steps = 3;
  std::size_t slots = 3;
  std::size_t features = 4;
  std::size_t types = 4;
  /// Allow trailing padded steps and padded event slots.
  bool padding = true;
};

/// Batch laid out as the pipeline pads it: live events first within a step,
/// live steps first within a sequence, every sequence with at least one step.
inline EqualTimeBatch random_batch(Rng& rng, const BatchShape& s) {
  EqualTimeBatch b;
  b.events = random_tensor({s.batch, s.steps, s.slots, s.features}, rng);
  b.event_mask = Mask({s.batch, s.steps, s.slots}, false);
  b.step_mask = Mask({s.batch, s.steps}, false);
  b.type_ids.assign(s.batch * s.steps * s.slots, -1);
  std::uniform_int_distribution<std::size_t> len(s.padding ? 1 : s.steps, s.steps);
  std::uniform_int_distribution<std::size_t> cnt(1, s.slots);
  std::uniform_int_distribution<int> type(0, static_cast<int>(s.types) - 1);
  for (std::size_t i = 0; i < s.batch; ++i) {
    const std::size_t live_steps = len(rng);
    for (std::size_t t = 0; t < s.steps; ++t) {
      const std::size_t row = i * s.steps + t;
      if (t >= live_steps) {
        for (std::size_t n = 0; n < s.slots; ++n)
          for (std::size_t m = 0; m < s.features; ++m) b.events[(row * s.slots + n) * s.features + m] = 0.0;
        continue;
      }
      b.step_mask.live[row] = 1;
      const std::size_t n_live = s.padding ? cnt(rng) : s.slots;
      for (std::size_t n = 0; n < s.slots; ++n) {
        if (n < n_live) {
          b.event_mask.live[row * s.slots + n] = 1;
          b.type_ids[row * s.slots + n] = type(rng);
        } else {
          for (std::size_t m = 0; m < s.features; ++m) b.events[(row * s.slots + n) * s.features + m] = 0.0;
        }
      }
    }
  }
  return b;
}

/// Row-stochastic K×K matrix with generic (random) entries.
inline Tensor random_stochastic(std::size_t k, Rng& rng) {
  Tensor t = random_tensor({k, k}, rng, 0.05, 1.0);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += t[i * k + j];
    for (std::size_t j = 0; j < k; ++j) t[i * k + j] /= s;
  }
  return t;
}

/// Contracts an arbitrary output with fixed random weights so a single scalar
/// exercises every output entry.
inline Var project(Var out, const Tensor& weights) {
  Tape& tape = *out.tape;
  return ops::sum_all(ops::mul(out, tape.constant(weights)));
}

struct GradientReport {
  double max_relative_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central finite differences against the taped gradient for every entry of
/// every listed parameter. The error of a parameter is
///   ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// and the report carries the largest one.
inline GradientReport check_gradients(const std::vector<Parameter*>& params, const std::function<Var(Tape&)>& loss,
                                      double h = 1e-5) {
  for (Parameter* p : params) p->grad = Tensor(p->value.shape(), 0.0);
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  GradientReport report;
  for (Parameter* p : params) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double orig = p->value[k];
      p->value[k] = orig + h;
      double up;
      {
        Tape tape;
        up = loss(tape).value().item();
      }
      p->value[k] = orig - h;
      double down;
      {
        Tape tape;
        down = loss(tape).value().item();
      }
      p->value[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[k];
      diff += (analytic - numeric) * (analytic - numeric);
      na += analytic * analytic;
      nn += numeric * numeric;
      ++report.checked;
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    const double rel = scale > 0.0 ? std::sqrt(diff) / scale : 0.0;
    if (rel > report.max_relative_error || report.worst.empty()) {
      report.max_relative_error = std::max(rel, report.max_relative_error);
      if (rel >= report.max_relative_error) report.worst = p->name;
    }
  }
  return report;
}

inline std::vector<Parameter*> trainable(ParameterStore& store) {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store[i].trainable) out.push_back(&store[i]);
  return out;
}

}  // namespace eqtime::testing

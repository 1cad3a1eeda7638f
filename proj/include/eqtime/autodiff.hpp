#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eqtime/tensor.hpp"

namespace eqtime {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Named parameters in insertion order. Addresses are stable for the lifetime
/// of the store, so tapes may hold raw pointers into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(std::string name, Tensor init, bool trainable = true);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t trainable_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Records primitive ops in execution order and replays their adjoints in
/// exact reverse order. A tape is single-use: backward may run once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter; its adjoint is added into `p.grad` when trainable.
  Var param(Parameter& p);
  /// Leaf bound to a parameter that never receives gradient, even if trainable.
  Var frozen(const Parameter& p);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }
  /// Adjoint of node `id`; empty span when nothing flowed into it.
  std::span<const double> grad(std::uint32_t id) const { return nodes_[id].grad; }
  /// Mutable adjoint of an input, zero-initialised on first use. Returns an
  /// empty span when the input does not require a gradient.
  std::span<double> grad_sink(std::uint32_t id);

  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::vector<double> grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace ops {

/// [..,m,k] x [k,n] (shared right operand) or [..,m,k] x [..,k,n] with equal
/// batch dims. With `transpose_b` the right operand is read as [..,n,k].
Var matmul(Var a, Var b, bool transpose_b = false);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var tanh(Var a);
Var sigmoid(Var a);

enum class Elementwise { kAdd, kSub, kMul, kTanh, kSigmoid };
Var elementwise(Elementwise kind, Var a, Var b);
Var elementwise(Elementwise kind, Var a);

/// x[..., n] + bias[n]
Var add_bias(Var x, Var bias);

/// Softmax over the last axis restricted to entries where `mask` is live.
/// Masked entries come out as exactly zero and pass no gradient.
Var masked_softmax(Var x, const Mask& mask);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(Var x, Shape shape);
/// Repeats a size-1 axis `n` times.
Var expand(Var x, std::size_t axis, std::size_t n);

/// Reductions remove `axis`. The optional mask covers dims [0, axis] of x;
/// masked slices are skipped entirely. Masked mean divides by the live count.
Var reduce_sum(Var x, std::size_t axis, const Mask* mask = nullptr);
Var reduce_mean(Var x, std::size_t axis, const Mask* mask = nullptr);
Var sum_all(Var x);

/// Picks `when_true` where `cond` (covering leading dims of the operands) is live.
Var select(const Mask& cond, Var when_true, Var when_false);

Var layer_norm(Var x, Var gain, Var offset, double eps = 1e-5);

/// Rows of `table` [V, M] gathered by id; id -1 yields a zero row.
Var embedding(Var table, std::span<const int> ids, Shape prefix);

/// Mean binary cross-entropy over every entry, computed from logits.
Var bce_with_logits(Var logits, const Tensor& targets);
/// Mean categorical cross-entropy over live rows of logits [.., V].
Var cross_entropy(Var logits, std::span<const int> targets, const Mask& row_mask);

}  // namespace ops
}  // namespace eqtime

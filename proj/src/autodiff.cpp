#include "eqtime/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "eqtime/error.hpp"

namespace eqtime {

// ---------------------------------------------------------------------------
// ParameterStore

ParameterStore::ParameterStore(const ParameterStore& other) : index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParameterStore::add(std::string name, Tensor init, bool trainable) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(init.shape(), 0.0);
  p->value = std::move(init);
  p->trainable = trainable;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + std::string(name) + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + std::string(name) + "'");
  return *params_[it->second];
}

bool ParameterStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape(), 0.0);
    else p->grad.fill(0.0);
  }
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->trainable ? p->value.size() : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(id); }

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::frozen(const Parameter& p) {
  Node n;
  n.external = &p.value;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("op mixes values from different tapes");
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

std::span<double> Tape::grad_sink(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss was not recorded on this tape");
  if (consumed_) throw ContractError("backward already ran on this tape; record a new one");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(value(loss.id).shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad.assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      Tensor& g = n.param->grad;
      if (g.shape() != n.param->value.shape()) g = Tensor(n.param->value.shape(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) g[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, static_cast<std::uint32_t>(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {
namespace {

// C[m,n] += op(A)[m,k] * op(B)[k,n]; A is stored [k,m] when ta, B is stored [n,k] when tb.
void gemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* A,
              const double* B, double* C) {
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double a = A[i * k + p];
        const double* brow = B + p * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
        C[i * n + j] += s;
      }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        const double a = A[p * m + i];
        const double* brow = B + p * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += A[p * m + i] * B[j * k + p];
        C[i * n + j] += s;
      }
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F>
Var unary(Var a, F&& f, std::function<double(double x, double y)> dfdx) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape->record(std::move(out), {a}, [a, dfdx = std::move(dfdx)](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto ga = t.grad_sink(a.id);
    if (ga.empty()) return;
    const Tensor& x = t.value(a.id);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  auto fail = [&] {
    return DimensionError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()) +
                          (transpose_b ? " (right transposed)" : ""));
  };
  if (A.rank() < 2 || B.rank() < 2) throw fail();
  const std::size_t r = A.rank();
  const std::size_t m = A.dim(r - 2);
  const std::size_t k = A.dim(r - 1);
  const bool shared = B.rank() == 2;
  if (!shared) {
    if (B.rank() != r) throw fail();
    for (std::size_t i = 0; i + 2 < r; ++i)
      if (A.dim(i) != B.dim(i)) throw fail();
  }
  const std::size_t rb = B.rank();
  const std::size_t kb = transpose_b ? B.dim(rb - 1) : B.dim(rb - 2);
  const std::size_t n = transpose_b ? B.dim(rb - 2) : B.dim(rb - 1);
  if (kb != k) throw fail();
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= A.dim(i);

  Shape out_shape(A.shape().begin(), A.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const double* bp = B.data().data() + (shared ? 0 : bi * k * n);
    gemm_acc(false, transpose_b, m, n, k, A.data().data() + bi * m * k, bp, out.data().data() + bi * m * n);
  }
  return a.tape->record(std::move(out), {a, b},
                        [a, b, transpose_b, shared, batch, m, n, k](Tape& t, std::uint32_t self) {
    const double* g = t.grad(self).data();
    const double* A = t.value(a.id).data().data();
    const double* B = t.value(b.id).data().data();
    auto ga = t.grad_sink(a.id);
    if (!ga.empty()) {
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* bp = B + (shared ? 0 : bi * k * n);
        // dA = dC * op(B)^T
        gemm_acc(false, !transpose_b, m, k, n, g + bi * m * n, bp, ga.data() + bi * m * k);
      }
    }
    auto gb = t.grad_sink(b.id);
    if (!gb.empty()) {
      for (std::size_t bi = 0; bi < batch; ++bi) {
        double* gbp = gb.data() + (shared ? 0 : bi * k * n);
        if (transpose_b) {
          // dB[n,k] = dC^T * A
          gemm_acc(true, false, n, k, m, g + bi * m * n, A + bi * m * k, gbp);
        } else {
          // dB[k,n] = A^T * dC
          gemm_acc(true, false, k, n, m, A + bi * m * k, g + bi * m * n, gbp);
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("add", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    for (Var v : {a, b}) {
      auto gv = t.grad_sink(v.id);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("sub", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto ga = t.grad_sink(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = t.grad_sink(b.id);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("mul", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    const Tensor& x = t.value(a.id);
    const Tensor& y = t.value(b.id);
    auto ga = t.grad_sink(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
    auto gb = t.grad_sink(b.id);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var elementwise(Elementwise kind, Var a, Var b) {
  switch (kind) {
    case Elementwise::kAdd: return add(a, b);
    case Elementwise::kSub: return sub(a, b);
    case Elementwise::kMul: return mul(a, b);
    default: throw ContractError("elementwise: unary kind given two operands");
  }
}

Var elementwise(Elementwise kind, Var a) {
  switch (kind) {
    case Elementwise::kTanh: return tanh(a);
    case Elementwise::kSigmoid: return sigmoid(a);
    default: throw ContractError("elementwise: binary kind given one operand");
  }
}

Var add_bias(Var x, Var bias) {
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  if (X.rank() == 0 || b.rank() != 1 || b.dim(0) != X.dim(X.rank() - 1)) {
    throw DimensionError("add_bias: " + shape_string(X.shape()) + " + " + shape_string(b.shape()));
  }
  const std::size_t n = b.size();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] + b[i % n];
  return x.tape->record(std::move(out), {x, bias}, [x, bias, n](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_sink(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    auto gb = t.grad_sink(bias.id);
    if (!gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
  });
}

Var masked_softmax(Var x, const Mask& mask) {
  const Tensor& X = x.value();
  if (X.rank() == 0 || mask.shape != X.shape()) {
    throw DimensionError("masked_softmax: mask " + shape_string(mask.shape) + " for input " +
                         shape_string(X.shape()));
  }
  const std::size_t n = X.dim(X.rank() - 1);
  const std::size_t rows = X.size() / n;
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data().data() + r * n;
    const std::uint8_t* mr = mask.live.data() + r * n;
    double mx = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mr[j]) continue;
      if (!any || xr[j] > mx) mx = xr[j];
      any = true;
    }
    if (!any) throw DegenerateRowError("masked_softmax: row " + std::to_string(r) + " has no live entries");
    double* yr = out.data().data() + r * n;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mr[j]) continue;
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j)
      if (mr[j]) yr[j] /= sum;
  }
  return x.tape->record(std::move(out), {x}, [x, mask, n, rows](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_sink(x.id);
    if (gx.empty()) return;
    const Tensor& y = t.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (mask.live[r * n + j]) dot += y[r * n + j] * g[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        if (mask.live[r * n + j]) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const Tensor& first = parts[0].value();
  if (axis >= first.rank()) throw DimensionError("concat: axis out of range for " + shape_string(first.shape()));
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.value().shape();
    bool ok = s.size() == first.rank();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != first.dim(i)) ok = false;
    if (!ok) {
      throw DimensionError("concat: " + shape_string(s) + " does not match " + shape_string(first.shape()) +
                           " off axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& v = p.value();
    const std::size_t block = v.dim(axis) * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(v.data().data() + o * block, block, out.data().data() + o * os.len * os.inner + off * os.inner);
    off += v.dim(axis);
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [ins, offsets, axis, os](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    for (std::size_t pi = 0; pi < ins.size(); ++pi) {
      auto gp = t.grad_sink(ins[pi].id);
      if (gp.empty()) continue;
      const std::size_t block = t.value(ins[pi].id).dim(axis) * os.inner;
      for (std::size_t o = 0; o < os.outer; ++o) {
        const double* src = g.data() + o * os.len * os.inner + offsets[pi] * os.inner;
        for (std::size_t i = 0; i < block; ++i) gp[o * block + i] += src[i];
      }
    }
  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor& X = x.value();
  if (axis >= X.rank() || start + length > X.dim(axis)) {
    throw DimensionError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                         std::to_string(axis) + " of " + shape_string(X.shape()));
  }
  const AxisSplit is = split_at(X.shape(), axis);
  Shape out_shape = X.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t block = length * is.inner;
  for (std::size_t o = 0; o < is.outer; ++o)
    std::copy_n(X.data().data() + o * is.len * is.inner + start * is.inner, block, out.data().data() + o * block);
  return x.tape->record(std::move(out), {x}, [x, is, start, block](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_sink(x.id);
    if (gx.empty()) return;
    for (std::size_t o = 0; o < is.outer; ++o) {
      double* dst = gx.data() + o * is.len * is.inner + start * is.inner;
      for (std::size_t i = 0; i < block; ++i) dst[i] += g[o * block + i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_sink(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

Var expand(Var x, std::size_t axis, std::size_t n) {
  const Tensor& X = x.value();
  if (axis >= X.rank() || X.dim(axis) != 1) {
    throw DimensionError("expand: axis " + std::to_string(axis) + " of " + shape_string(X.shape()) +
                         " is not a singleton");
  }
  const AxisSplit is = split_at(X.shape(), axis);
  Shape out_shape = X.shape();
  out_shape[axis] = n;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < is.outer; ++o)
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(X.data().data() + o * is.inner, is.inner, out.data().data() + (o * n + r) * is.inner);
  return x.tape->record(std::move(out), {x}, [x, is, n](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_sink(x.id);
    if (gx.empty()) return;
    for (std::size_t o = 0; o < is.outer; ++o)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < is.inner; ++i) gx[o * is.inner + i] += g[(o * n + r) * is.inner + i];
  });
}

namespace {

Var reduce(Var x, std::size_t axis, const Mask* mask, bool mean) {
  const Tensor& X = x.value();
  if (axis >= X.rank()) throw DimensionError("reduce: axis out of range for " + shape_string(X.shape()));
  if (mask) {
    Shape expect(X.shape().begin(), X.shape().begin() + static_cast<std::ptrdiff_t>(axis) + 1);
    if (mask->shape != expect) {
      throw DimensionError("reduce: mask " + shape_string(mask->shape) + " does not cover " + shape_string(expect));
    }
  }
  const AxisSplit is = split_at(X.shape(), axis);
  Shape out_shape = X.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  std::vector<double> weight(is.outer, 1.0);
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::size_t live = 0;
    double* dst = out.data().data() + o * is.inner;
    for (std::size_t l = 0; l < is.len; ++l) {
      if (mask && !mask->live[o * is.len + l]) continue;
      ++live;
      const double* src = X.data().data() + (o * is.len + l) * is.inner;
      for (std::size_t i = 0; i < is.inner; ++i) dst[i] += src[i];
    }
    if (mean) {
      if (live == 0) throw DegenerateRowError("reduce_mean: slice " + std::to_string(o) + " has no live entries");
      weight[o] = 1.0 / static_cast<double>(live);
      for (std::size_t i = 0; i < is.inner; ++i) dst[i] /= static_cast<double>(live);
    }
  }
  std::optional<Mask> m;
  if (mask) m = *mask;
  return x.tape->record(std::move(out), {x}, [x, is, m, weight](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad_sink(x.id);
    if (gx.empty()) return;
    for (std::size_t o = 0; o < is.outer; ++o)
      for (std::size_t l = 0; l < is.len; ++l) {
        if (m && !m->live[o * is.len + l]) continue;
        for (std::size_t i = 0; i < is.inner; ++i)
          gx[(o * is.len + l) * is.inner + i] += g[o * is.inner + i] * weight[o];
      }
  });
}

}  // namespace

Var reduce_sum(Var x, std::size_t axis, const Mask* mask) { return reduce(x, axis, mask, false); }
Var reduce_mean(Var x, std::size_t axis, const Mask* mask) { return reduce(x, axis, mask, true); }

Var sum_all(Var x) {
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [x](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    auto gx = t.grad_sink(x.id);
    for (double& v : gx) v += g;
  });
}

Var select(const Mask& cond, Var when_true, Var when_false) {
  const Tensor& a = when_true.value();
  const Tensor& b = when_false.value();
  require_same_shape("select", a, b);
  bool prefix = cond.shape.size() <= a.rank();
  for (std::size_t i = 0; prefix && i < cond.shape.size(); ++i) prefix = cond.shape[i] == a.dim(i);
  if (!prefix) {
    throw DimensionError("select: condition " + shape_string(cond.shape) + " is not a prefix of " +
                         shape_string(a.shape()));
  }
  const std::size_t inner = a.size() / std::max<std::size_t>(cond.size(), 1);
  Tensor out(a.shape());
  for (std::size_t c = 0; c < cond.size(); ++c) {
    const Tensor& src = cond.live[c] ? a : b;
    std::copy_n(src.data().data() + c * inner, inner, out.data().data() + c * inner);
  }
  return when_true.tape->record(std::move(out), {when_true, when_false},
                                [cond, when_true, when_false, inner](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto ga = t.grad_sink(when_true.id);
    auto gb = t.grad_sink(when_false.id);
    for (std::size_t c = 0; c < cond.size(); ++c) {
      auto& dst = cond.live[c] ? ga : gb;
      if (dst.empty()) continue;
      for (std::size_t i = 0; i < inner; ++i) dst[c * inner + i] += g[c * inner + i];
    }
  });
}

Var layer_norm(Var x, Var gain, Var offset, double eps) {
  const Tensor& X = x.value();
  const Tensor& G = gain.value();
  const Tensor& B = offset.value();
  if (X.rank() == 0 || G.rank() != 1 || B.shape() != G.shape() || G.dim(0) != X.dim(X.rank() - 1)) {
    throw DimensionError("layer_norm: input " + shape_string(X.shape()) + " gain " + shape_string(G.shape()) +
                         " offset " + shape_string(B.shape()));
  }
  const std::size_t d = G.size();
  const std::size_t rows = X.size() / d;
  Tensor out(X.shape());
  std::vector<double> xhat(X.size());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (xr[i] - mu) * inv[r];
      out[r * d + i] = G[i] * xhat[r * d + i] + B[i];
    }
  }
  return x.tape->record(std::move(out), {x, gain, offset},
                        [x, gain, offset, d, rows, xhat = std::move(xhat), inv = std::move(inv)](
                            Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    const Tensor& G = t.value(gain.id);
    auto gg = t.grad_sink(gain.id);
    auto gb = t.grad_sink(offset.id);
    auto gx = t.grad_sink(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_dx = 0.0;
      double mean_dx_xhat = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double gi = g[r * d + i];
        if (!gg.empty()) gg[i] += gi * xhat[r * d + i];
        if (!gb.empty()) gb[i] += gi;
        const double dxhat = gi * G[i];
        mean_dx += dxhat;
        mean_dx_xhat += dxhat * xhat[r * d + i];
      }
      if (gx.empty()) continue;
      mean_dx /= static_cast<double>(d);
      mean_dx_xhat /= static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) {
        const double dxhat = g[r * d + i] * G[i];
        gx[r * d + i] += inv[r] * (dxhat - mean_dx - xhat[r * d + i] * mean_dx_xhat);
      }
    }
  });
}

Var embedding(Var table, std::span<const int> ids, Shape prefix) {
  const Tensor& E = table.value();
  if (E.rank() != 2 || shape_size(prefix) != ids.size()) {
    throw DimensionError("embedding: table " + shape_string(E.shape()) + " with " + std::to_string(ids.size()) +
                         " ids for prefix " + shape_string(prefix));
  }
  const std::size_t vocab = E.dim(0);
  const std::size_t m = E.dim(1);
  for (int id : ids) {
    if (id < -1 || id >= static_cast<int>(vocab)) {
      throw DimensionError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
    }
  }
  Shape out_shape = prefix;
  out_shape.push_back(m);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] >= 0) std::copy_n(E.data().data() + static_cast<std::size_t>(ids[i]) * m, m, out.data().data() + i * m);
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [table, idv = std::move(idv), m](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto ge = t.grad_sink(table.id);
    if (ge.empty()) return;
    for (std::size_t i = 0; i < idv.size(); ++i) {
      if (idv[i] < 0) continue;
      double* dst = ge.data() + static_cast<std::size_t>(idv[i]) * m;
      for (std::size_t j = 0; j < m; ++j) dst[j] += g[i * m + j];
    }
  });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& Z = logits.value();
  require_same_shape("bce_with_logits", Z, targets);
  if (Z.size() == 0) throw DimensionError("bce_with_logits: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    const double z = Z[i];
    total += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const double count = static_cast<double>(Z.size());
  return logits.tape->record(Tensor::scalar(total / count), {logits}, [logits, targets, count](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    auto gz = t.grad_sink(logits.id);
    if (gz.empty()) return;
    const Tensor& Z = t.value(logits.id);
    for (std::size_t i = 0; i < Z.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-Z[i]));
      gz[i] += g * (p - targets[i]) / count;
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, const Mask& row_mask) {
  const Tensor& Z = logits.value();
  if (Z.rank() == 0) throw DimensionError("cross_entropy: scalar logits");
  const std::size_t v = Z.dim(Z.rank() - 1);
  const std::size_t rows = Z.size() / v;
  if (targets.size() != rows || row_mask.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " rows, " + std::to_string(targets.size()) +
                         " targets, mask " + shape_string(row_mask.shape));
  }
  std::size_t live = 0;
  double total = 0.0;
  std::vector<double> probs(Z.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!row_mask.live[r]) continue;
    const int y = targets[r];
    if (y < 0 || y >= static_cast<int>(v)) {
      throw DimensionError("cross_entropy: target " + std::to_string(y) + " outside vocabulary of " + std::to_string(v));
    }
    ++live;
    const double* zr = Z.data().data() + r * v;
    const double mx = *std::max_element(zr, zr + v);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(zr[j] - mx);
    const double lse = mx + std::log(sum);
    total += lse - zr[y];
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] = std::exp(zr[j] - lse);
  }
  if (live == 0) throw DegenerateRowError("cross_entropy: no live rows");
  const double count = static_cast<double>(live);
  std::vector<int> tv(targets.begin(), targets.end());
  return logits.tape->record(Tensor::scalar(total / count), {logits},
                             [logits, tv = std::move(tv), row_mask, probs = std::move(probs), v, rows, count](
                                 Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    auto gz = t.grad_sink(logits.id);
    if (gz.empty()) return;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!row_mask.live[r]) continue;
      for (std::size_t j = 0; j < v; ++j) {
        const double onehot = static_cast<int>(j) == tv[r] ? 1.0 : 0.0;
        gz[r * v + j] += g * (probs[r * v + j] - onehot) / count;
      }
    }
  });
}

}  // namespace ops
}  // namespace eqtime

// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mfsbi/errors.hpp"
#include "mfsbi/kernels.hpp"

namespace mfsbi::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(ad::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("Tensor::item on shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, requires_grad()); }

// ---- Tape -------------------------------------------------------------------

void Tape::record(std::string_view op, std::vector<std::shared_ptr<TensorNode>> inputs,
                  std::vector<std::shared_ptr<TensorNode>> outputs, BackwardFn backward) {
  records_.push_back({std::string(op), std::move(inputs), std::move(outputs), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  for (auto& rec : records_) {
    for (auto& out : rec.outputs) std::fill(out->grad.begin(), out->grad.end(), 0.0);
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_output(Shape shape, std::vector<double> values, bool track) {
  return Tensor::from(std::move(shape), std::move(values), track);
}

void check_finite(std::string_view op, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite value " + std::to_string(values[i]) +
                         " at flat index " + std::to_string(i));
    }
  }
}

namespace {

void record(std::string_view op, std::initializer_list<Tensor> inputs, const Tensor& out,
            Tape::BackwardFn fn) {
  std::vector<std::shared_ptr<TensorNode>> in;
  in.reserve(inputs.size());
  for (const auto& t : inputs) in.push_back(t.shared());
  g_active_tape->record(op, std::move(in), {out.shared()}, std::move(fn));
}

struct BinaryLayout {
  Shape out;
  std::size_t na;
  std::size_t nb;
};

BinaryLayout binary_layout(std::string_view op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return {sa, a.numel(), b.numel()};
  if (sa.size() == sb.size() + 1 && std::equal(sb.begin(), sb.end(), sa.begin() + 1)) {
    return {sa, a.numel(), b.numel()};
  }
  if (sb.size() == sa.size() + 1 && std::equal(sa.begin(), sa.end(), sb.begin() + 1)) {
    return {sb, a.numel(), b.numel()};
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(sa) + " and " +
                   shape_str(sb) + " (only leading-batch broadcasting is supported)");
}

// f(a, b) -> out; da(a, b, out) -> d out / d a; db likewise.
template <class F, class DA, class DB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const auto layout = binary_layout(op, a, b);
  const std::size_t n = numel(layout.out);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % layout.na], bv[i % layout.nb]);
  check_finite(op, out);
  const bool track = needs_grad({&a, &b});
  Tensor result = make_output(layout.out, std::move(out), track);
  if (track) {
    auto an = a.shared();
    auto bn = b.shared();
    auto on = result.shared();
    record(op, {a, b}, result, [an, bn, on, n, na = layout.na, nb = layout.nb, da, db]() {
      const auto& g = on->grad;
      const auto& o = on->value;
      for (std::size_t i = 0; i < n; ++i) {
        if (g[i] == 0.0) continue;
        const double x = an->value[i % na];
        const double y = bn->value[i % nb];
        if (an->requires_grad) an->grad[i % na] += g[i] * da(x, y, o[i]);
        if (bn->requires_grad) bn->grad[i % nb] += g[i] * db(x, y, o[i]);
      }
    });
  }
  return result;
}

// f(x) -> y; df(x, y) -> dy/dx.
template <class F, class DF>
Tensor unary(std::string_view op, const Tensor& x, F f, DF df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  check_finite(op, out);
  const bool track = needs_grad({&x});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    auto xn = x.shared();
    auto on = result.shared();
    record(op, {x}, result, [xn, on, df]() {
      for (std::size_t i = 0; i < on->value.size(); ++i) {
        xn->grad[i] += on->grad[i] * df(xn->value[i], on->value[i]);
      }
    });
  }
  return result;
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_rank2(std::string_view op, const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got shape " + shape_str(x.shape()));
  }
}

}  // namespace

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(xv[i]) + " at flat index " +
                        std::to_string(i));
    }
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor pow(const Tensor& x, double p) {
  return unary(
      "pow", x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  double s = 0.0;
  for (double v : xv) s += v;
  check_finite("sum", std::span<const double>(&s, 1));
  const bool track = needs_grad({&x});
  Tensor result = make_output({}, {s}, track);
  if (track) {
    auto xn = x.shared();
    auto on = result.shared();
    record("sum", {x}, result, [xn, on]() {
      const double g = on->grad[0];
      for (double& gx : xn->grad) gx += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("sum_last: scalar input");
  const std::size_t inner = x.shape().back();
  const std::size_t outer = inner ? x.numel() / inner : 0;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const auto xv = x.data();
  std::vector<double> out(outer, 0.0);
  for (std::size_t i = 0; i < outer; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < inner; ++j) s += xv[i * inner + j];
    out[i] = s;
  }
  check_finite("sum_last", out);
  const bool track = needs_grad({&x});
  Tensor result = make_output(std::move(out_shape), std::move(out), track);
  if (track) {
    auto xn = x.shared();
    auto on = result.shared();
    record("sum_last", {x}, result, [xn, on, inner, outer]() {
      for (std::size_t i = 0; i < outer; ++i) {
        const double g = on->grad[i];
        for (std::size_t j = 0; j < inner; ++j) xn->grad[i * inner + j] += g;
      }
    });
  }
  return result;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t inner = x.shape().back();
  const std::size_t outer = inner ? x.numel() / inner : 0;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < outer; ++i) {
    const double* row = xv.data() + i * inner;
    const double mx = *std::max_element(row, row + inner);
    double z = 0.0;
    for (std::size_t j = 0; j < inner; ++j) {
      out[i * inner + j] = std::exp(row[j] - mx);
      z += out[i * inner + j];
    }
    for (std::size_t j = 0; j < inner; ++j) out[i * inner + j] /= z;
  }
  check_finite("softmax", out);
  const bool track = needs_grad({&x});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    auto xn = x.shared();
    auto on = result.shared();
    record("softmax", {x}, result, [xn, on, inner, outer]() {
      for (std::size_t i = 0; i < outer; ++i) {
        const double* y = on->value.data() + i * inner;
        const double* g = on->grad.data() + i * inner;
        double dot = 0.0;
        for (std::size_t j = 0; j < inner; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < inner; ++j) xn->grad[i * inner + j] += y[j] * (g[j] - dot);
      }
    });
  }
  return result;
}

// ---- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  check_finite("matmul", out);
  const bool track = needs_grad({&a, &b});
  Tensor result = make_output({m, n}, std::move(out), track);
  if (track) {
    auto an = a.shared();
    auto bn = b.shared();
    auto on = result.shared();
    record("matmul", {a, b}, result, [an, bn, on, m, k, n]() {
      if (an->requires_grad) {
        kernels::matmul_a_bt_acc(on->grad.data(), bn->value.data(), an->grad.data(), m, n, k);
      }
      if (bn->requires_grad) {
        kernels::matmul_at_b_acc(an->value.data(), on->grad.data(), bn->grad.data(), m, k, n);
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2("linear", x);
  require_rank2("linear", weight);
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  if (weight.dim(0) != k || bias.shape() != Shape{n}) {
    throw ShapeError("linear: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                     ", bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(m * n);
  const auto bv = bias.data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  kernels::matmul(x.data().data(), weight.data().data(), out.data(), m, k, n, /*accumulate=*/true);
  check_finite("linear", out);
  const bool track = needs_grad({&x, &weight, &bias});
  Tensor result = make_output({m, n}, std::move(out), track);
  if (track) {
    auto xn = x.shared();
    auto wn = weight.shared();
    auto bn = bias.shared();
    auto on = result.shared();
    record("linear", {x, weight, bias}, result, [xn, wn, bn, on, m, k, n]() {
      if (xn->requires_grad) {
        kernels::matmul_a_bt_acc(on->grad.data(), wn->value.data(), xn->grad.data(), m, n, k);
      }
      if (wn->requires_grad) {
        kernels::matmul_at_b_acc(xn->value.data(), on->grad.data(), wn->grad.data(), m, k, n);
      }
      if (bn->requires_grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) bn->grad[j] += on->grad[i * n + j];
        }
      }
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank2("concat", p);
  const std::size_t other = parts[0].dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != other) {
      throw ShapeError("concat: mismatched shapes " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()) + " along axis " + std::to_string(axis));
    }
    total += p.dim(axis);
  }
  const std::size_t rows = axis == 0 ? total : other;
  const std::size_t cols = axis == 0 ? other : total;
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto pv = p.data();
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t oi = axis == 0 ? off + i : i;
        const std::size_t oj = axis == 0 ? j : off + j;
        out[oi * cols + oj] = pv[i * pc + j];
      }
    }
    off += p.dim(axis);
  }
  bool track = false;
  if (active_tape()) {
    track = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  }
  Tensor result = make_output({rows, cols}, std::move(out), track);
  if (track) {
    std::vector<std::shared_ptr<TensorNode>> in;
    for (const auto& p : parts) in.push_back(p.shared());
    auto on = result.shared();
    active_tape()->record("concat", in, {on}, [in, on, offsets, axis, cols]() {
      for (std::size_t t = 0; t < in.size(); ++t) {
        auto& pn = in[t];
        if (!pn->requires_grad) continue;
        const std::size_t pr = pn->shape[0], pc = pn->shape[1];
        for (std::size_t i = 0; i < pr; ++i) {
          for (std::size_t j = 0; j < pc; ++j) {
            const std::size_t oi = axis == 0 ? offsets[t] + i : i;
            const std::size_t oj = axis == 0 ? j : offsets[t] + j;
            pn->grad[i * pc + j] += on->grad[oi * cols + oj];
          }
        }
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_rank2("slice", x);
  if (axis > 1 || begin > end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of shape " + shape_str(x.shape()));
  }
  if (axis == 1) {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return take_columns(x, idx);
  }
  const std::size_t cols = x.dim(1);
  const auto xv = x.data();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          xv.begin() + static_cast<std::ptrdiff_t>(end * cols));
  const bool track = needs_grad({&x});
  Tensor result = make_output({end - begin, cols}, std::move(out), track);
  if (track) {
    auto xn = x.shared();
    auto on = result.shared();
    record("slice", {x}, result, [xn, on, begin, cols]() {
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[begin * cols + i] += on->grad[i];
    });
  }
  return result;
}

Tensor take_columns(const Tensor& x, std::span<const std::size_t> indices) {
  require_rank2("take_columns", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1), k = indices.size();
  for (auto c : indices) {
    if (c >= cols) throw ShapeError("take_columns: column " + std::to_string(c) + " out of range for " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  std::vector<double> out(rows * k);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = xv[i * cols + indices[j]];
  }
  const bool track = needs_grad({&x});
  Tensor result = make_output({rows, k}, std::move(out), track);
  if (track) {
    auto xn = x.shared();
    auto on = result.shared();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record("take_columns", {x}, result, [xn, on, idx, rows, cols]() {
      const std::size_t k = idx.size();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < k; ++j) xn->grad[i * cols + idx[j]] += on->grad[i * k + j];
      }
    });
  }
  return result;
}

Tensor merge_columns(const Tensor& a, std::span<const std::size_t> a_idx, const Tensor& b,
                     std::span<const std::size_t> b_idx) {
  require_rank2("merge_columns", a);
  require_rank2("merge_columns", b);
  const std::size_t rows = a.dim(0);
  const std::size_t width = a_idx.size() + b_idx.size();
  if (b.dim(0) != rows || a.dim(1) != a_idx.size() || b.dim(1) != b_idx.size()) {
    throw ShapeError("merge_columns: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " do not match index lists");
  }
  std::vector<int> seen(width, 0);
  for (auto c : a_idx) seen.at(c)++;
  for (auto c : b_idx) seen.at(c)++;
  if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) {
    throw ShapeError("merge_columns: index lists must partition 0.." + std::to_string(width - 1));
  }
  std::vector<double> out(rows * width);
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t ka = a_idx.size(), kb = b_idx.size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < ka; ++j) out[i * width + a_idx[j]] = av[i * ka + j];
    for (std::size_t j = 0; j < kb; ++j) out[i * width + b_idx[j]] = bv[i * kb + j];
  }
  const bool track = needs_grad({&a, &b});
  Tensor result = make_output({rows, width}, std::move(out), track);
  if (track) {
    auto an = a.shared();
    auto bn = b.shared();
    auto on = result.shared();
    std::vector<std::size_t> ai(a_idx.begin(), a_idx.end());
    std::vector<std::size_t> bi(b_idx.begin(), b_idx.end());
    record("merge_columns", {a, b}, result, [an, bn, on, ai, bi, rows, width]() {
      const std::size_t ka = ai.size(), kb = bi.size();
      for (std::size_t i = 0; i < rows; ++i) {
        if (an->requires_grad) {
          for (std::size_t j = 0; j < ka; ++j) an->grad[i * ka + j] += on->grad[i * width + ai[j]];
        }
        if (bn->requires_grad) {
          for (std::size_t j = 0; j < kb; ++j) bn->grad[i * kb + j] += on->grad[i * width + bi[j]];
        }
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const bool track = needs_grad({&x});
  Tensor result = make_output(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), track);
  if (track) {
    auto xn = x.shared();
    auto on = result.shared();
    record("reshape", {x}, result, [xn, on]() {
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return result;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
    throw ShapeError("conv2d: expected x (B,C,H,W), weight (O,C,k,k), bias (O); got " +
                     shape_str(x.shape()) + ", " + shape_str(weight.shape()) + ", " + shape_str(bias.shape()));
  }
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), ksz = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != ksz || bias.dim(0) != cout || stride == 0) {
    throw ShapeError("conv2d: channel/kernel mismatch between " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  if (h + 2 * padding < ksz || w + 2 * padding < ksz) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t oh = (h + 2 * padding - ksz) / stride + 1;
  const std::size_t ow = (w + 2 * padding - ksz) / stride + 1;
  const auto xv = x.data();
  const auto wv = weight.data();
  const auto bv = bias.data();
  std::vector<double> out(batch * cout * oh * ow);
  const auto pad = static_cast<std::ptrdiff_t>(padding);
#pragma omp parallel for schedule(static) if (batch * cout * oh * ow * cin * ksz * ksz > (1u << 18))
  for (std::ptrdiff_t bo = 0; bo < static_cast<std::ptrdiff_t>(batch * cout); ++bo) {
    const std::size_t bi = static_cast<std::size_t>(bo) / cout, o = static_cast<std::size_t>(bo) % cout;
    double* op = out.data() + (bi * cout + o) * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) op[i] = bv[o];
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xp = xv.data() + (bi * cin + c) * h * w;
      const double* wp = wv.data() + (o * cin + c) * ksz * ksz;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = 0.0;
          for (std::size_t ky = 0; ky < ksz; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < ksz; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              s += xp[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] * wp[ky * ksz + kx];
            }
          }
          op[oy * ow + ox] += s;
        }
      }
    }
  }
  check_finite("conv2d", out);
  const bool track = needs_grad({&x, &weight, &bias});
  Tensor result = make_output({batch, cout, oh, ow}, std::move(out), track);
  if (track) {
    auto xn = x.shared();
    auto wn = weight.shared();
    auto bn = bias.shared();
    auto on = result.shared();
    record("conv2d", {x, weight, bias}, result,
           [xn, wn, bn, on, batch, cin, h, w, cout, ksz, oh, ow, stride, pad]() {
             for (std::size_t bi = 0; bi < batch; ++bi) {
               for (std::size_t o = 0; o < cout; ++o) {
                 const double* gp = on->grad.data() + (bi * cout + o) * oh * ow;
                 if (bn->requires_grad) {
                   double s = 0.0;
                   for (std::size_t i = 0; i < oh * ow; ++i) s += gp[i];
                   bn->grad[o] += s;
                 }
                 for (std::size_t c = 0; c < cin; ++c) {
                   const double* xp = xn->value.data() + (bi * cin + c) * h * w;
                   double* gxp = xn->requires_grad ? xn->grad.data() + (bi * cin + c) * h * w : nullptr;
                   const double* wp = wn->value.data() + (o * cin + c) * ksz * ksz;
                   double* gwp = wn->requires_grad ? wn->grad.data() + (o * cin + c) * ksz * ksz : nullptr;
                   for (std::size_t oy = 0; oy < oh; ++oy) {
                     for (std::size_t ox = 0; ox < ow; ++ox) {
                       const double g = gp[oy * ow + ox];
                       if (g == 0.0) continue;
                       for (std::size_t ky = 0; ky < ksz; ++ky) {
                         const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                         if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                         for (std::size_t kx = 0; kx < ksz; ++kx) {
                           const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                           if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                           const std::size_t xi = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                           if (gwp) gwp[ky * ksz + kx] += g * xp[xi];
                           if (gxp) gxp[xi] += g * wp[ky * ksz + kx];
                         }
                       }
                     }
                   }
                 }
               }
             }
           });
  }
  return result;
}

// ---- optimizer ----------------------------------------------------------------

AdamState make_adam_state(std::span<const NamedParameter> params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.tensor.numel(), 0.0);
    state.second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
  return state;
}

void adam_step(std::span<NamedParameter> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but state for " +
                     std::to_string(state.first_moment.size()));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto g = params[p].tensor.grad();
    if (g.size() != state.first_moment[p].size()) {
      throw ShapeError("adam_step: parameter '" + params[p].name + "' has " + std::to_string(g.size()) +
                       " gradient entries, state expects " + std::to_string(state.first_moment[p].size()));
    }
    for (double v : g) {
      if (std::isnan(v)) throw NumericError("adam_step: NaN gradient in parameter '" + params[p].name + "'");
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto value = params[p].tensor.mutable_data();
    const auto g = params[p].tensor.grad();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void zero_grads(std::span<NamedParameter> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(leaf);
    tape.backward(y);
  }
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  std::vector<double> probe(x.data().begin(), x.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = orig - h;
    const double fm = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = orig;
    const double central = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mfsbi::ad

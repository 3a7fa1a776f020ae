// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dense float64 tensors with a reverse-mode tape and the Adam optimizer.
//
// A Tensor is a cheap handle to a shared node holding shape, values and
// (when gradients are tracked) a same-shape gradient buffer. Forward ops
// record a backward rule on the thread's active Tape when any input
// requires a gradient; without an active tape they are plain arithmetic.
// Tapes are meant to live for one optimisation step:
//
//   ad::Tape tape;
//   {
//     ad::TapeScope scope(tape);
//     auto loss = model.loss(batch);
//     tape.backward(loss);
//   }
//   adam.step(model.parameters());
//
// Every forward op checks its result for NaN/Inf and throws NumericError
// instead of letting it propagate. Elementwise binary ops broadcast only
// over a leading batch dimension: shapes must be equal, or one operand's
// shape must equal the other's shape with the first dimension dropped.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mfsbi::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same size as value iff requires_grad
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  /// Direct value access for optimizers and initializers. Never call this
  /// on a tensor that an active tape has already consumed.
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }

  void zero_grad();
  /// Detached copy: same values, no gradient, no tape history.
  Tensor detach() const;
  /// Deep copy that keeps the requires_grad flag (gradient zeroed).
  Tensor clone() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& shared() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of differentiable operations.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string op;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::vector<std::shared_ptr<TensorNode>> outputs;
    BackwardFn backward;
  };

  void record(std::string_view op, std::vector<std::shared_ptr<TensorNode>> inputs,
              std::vector<std::shared_ptr<TensorNode>> outputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every rule in reverse recording
  /// order. Intermediate gradients are reset first, so calling this twice
  /// accumulates into leaf gradients exactly twice. A loss that does not
  /// require gradients is a no-op. Throws ShapeError for non-scalar losses.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  const Record& at(std::size_t i) const { return records_.at(i); }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// The tape ops record onto in this thread, or nullptr.
Tape* active_tape();

/// RAII activation of a tape for the current thread (restores the previous one).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording for the current thread (restores the previous tape).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// True when an op on `inputs` must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
/// Fresh output node; allocates a gradient buffer when `track` is set.
Tensor make_output(Shape shape, std::vector<double> values, bool track);
/// Throws NumericError naming `op` if any value is NaN or infinite.
void check_finite(std::string_view op, std::span<const double> values);

// ---- elementwise binary (leading-batch broadcast) -------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// ---- scalar and unary ------------------------------------------------------
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
/// Throws DomainError for non-positive entries.
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(1 + e^x), evaluated stably.
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
/// x^p elementwise; non-integer p needs positive x.
Tensor pow(const Tensor& x, double p);

// ---- reductions ------------------------------------------------------------
/// Sum of all entries, shape {}.
Tensor sum(const Tensor& x);
/// Mean of all entries, shape {}.
Tensor mean(const Tensor& x);
/// Sum over the last axis: shape[:-1].
Tensor sum_last(const Tensor& x);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);

// ---- linear algebra and structure -----------------------------------------
/// (m x k) @ (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x @ w + b with x (B x in), w (in x out), b (out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Concatenate rank-2 tensors along axis 0 (rows) or 1 (columns).
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Half-open range [begin, end) along `axis` of a rank-2 tensor.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Columns `indices` of a rank-2 tensor, in that order.
Tensor take_columns(const Tensor& x, std::span<const std::size_t> indices);
/// Inverse of a column partition: output column a_idx[j] comes from a's
/// column j, b_idx[j] from b's column j. Together they must cover 0..width-1.
Tensor merge_columns(const Tensor& a, std::span<const std::size_t> a_idx, const Tensor& b,
                     std::span<const std::size_t> b_idx);
Tensor reshape(const Tensor& x, Shape shape);

/// 2-D convolution, NCHW input (B, C_in, H, W), weight (C_out, C_in, k, k),
/// bias (C_out), symmetric zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

// ---- optimizer -------------------------------------------------------------
struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

/// Zero-initialised moments shaped like `params`, t = 0.
AdamState make_adam_state(std::span<const NamedParameter> params, AdamConfig config = {});

/// One bias-corrected Adam update using each parameter's gradient buffer.
/// Parameters are updated in place; t increases by one. Throws NumericError
/// naming the first parameter whose gradient holds a NaN.
void adam_step(std::span<NamedParameter> params, AdamState& state);

void zero_grads(std::span<NamedParameter> params);

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12)
/// for a scalar-valued f at x, with central differences of step h.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace mfsbi::ad

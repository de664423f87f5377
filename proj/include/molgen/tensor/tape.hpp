// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "molgen/tensor/param_store.hpp"
#include "molgen/tensor/tensor.hpp"

namespace molgen::tensor {

MOLGEN_DEFINE_ERROR(EmptyTape);

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode recorder. Nodes are appended in evaluation order, so the
/// reverse of insertion order is a valid topological order for backward.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is readable through grad() after backward().
  Var variable(Tensor value);
  /// Parameter leaf; backward() adds its gradient into p.grad.
  Var param(Parameter& p);
  /// Read-only parameter leaf (no gradient sink), for concurrent evaluation.
  Var param(const Parameter& p);

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(std::uint32_t id) const;
  /// Gradient of the last backward() loss w.r.t. v; zeros if unreachable.
  Tensor grad(Var v) const;

  /// Gradient accumulator of node `id`, zero-initialised on first use.
  Tensor& grad_buffer(std::uint32_t id);
  bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }

  /// When disabled, ops still compute values but record no backward closures.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var record(Tensor value, Backward backward);

  /// Propagates d(loss)/d(node) to every node recorded before `loss` and
  /// accumulates parameter gradients into their stores.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    Backward backward;
    Parameter* sink = nullptr;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

using Index = std::shared_ptr<const std::vector<std::uint32_t>>;

inline Index make_index(std::vector<std::uint32_t> values) {
  return std::make_shared<const std::vector<std::uint32_t>>(std::move(values));
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// x[r, c] + bias[c]
Var add_bias(Var x, Var bias);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var square(Var a);
/// out[r] = a[index[r]]
Var gather_rows(Var a, const Index& index);
/// out[segment[r]] += a[r], with `segments` output rows.
Var segment_sum(Var a, const Index& segment, std::size_t segments);
/// Sum of all elements, shape {1}.
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
/// Rows of `table` selected by index (an embedding lookup).
Var embed(Var table, const Index& index);

struct BatchNormOptions {
  double eps = 1e-5;
  /// running <- momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
  bool training = true;
  /// Updated in training mode, read in evaluation mode. May be null in
  /// training mode.
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  const Tensor* eval_mean = nullptr;
  const Tensor* eval_var = nullptr;
};

/// Per-column normalisation over the rows of x, then gamma * xhat + beta.
Var batch_norm(Var x, Var gamma, Var beta, const BatchNormOptions& options);

/// Mean over rows of -log softmax(logits[r])[target[r]].
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

}  // namespace molgen::tensor

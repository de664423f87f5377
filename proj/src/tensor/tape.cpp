// SPDX-License-Identifier: Apache-2.0

#include "molgen/tensor/tape.hpp"

namespace molgen::tensor {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) { return constant(std::move(value)); }

Var Tape::param(Parameter& p) {
  Node node;
  node.external = &p.value;
  node.sink = p.trainable ? &p : nullptr;
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(const Parameter& p) {
  Node node;
  node.external = &p.value;
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_.at(id);
  return n.external != nullptr ? *n.external : n.owned;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.grad.empty()) return n.grad;
  return Tensor::zeros_like(value(v.id));
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(value(id));
  return n.grad;
}

Var Tape::record(Tensor value, Backward backward) {
  Node node;
  node.owned = std::move(value);
  if (grad_enabled_) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw EmptyTape("backward on an empty tape");
  if (loss.tape != this || loss.id >= nodes_.size()) {
    throw EmptyTape("loss was not recorded on this tape");
  }
  if (value(loss.id).size() != 1) {
    throw ShapeMismatch("backward needs a scalar loss, got " +
                        shape_string(value(loss.id).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.sink != nullptr) {
      Parameter& p = *n.sink;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor::zeros_like(p.value);
      double* dst = p.grad.ptr();
      const double* src = n.grad.ptr();
      for (std::size_t i = 0; i < p.grad.size(); ++i) dst[i] += src[i];
    }
  }
}

}  // namespace molgen::tensor

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "molgen/tensor/tensor.hpp"

namespace molgen::tensor {

MOLGEN_DEFINE_ERROR(MissingGradient);

struct Parameter {
  std::string name;
  Tensor value;
  /// Same shape as value once zero_grad() or a backward pass has touched it.
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  /// Buffers (e.g. batch-norm running statistics) are stored and
  /// checkpointed but never updated by the optimizer.
  bool trainable = true;
};

/// Named parameters in insertion order. Addresses are stable for the
/// lifetime of the store.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(std::string name, Tensor init, bool trainable = true);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::size_t size() const { return params_.size(); }
  std::deque<Parameter>& parameters() { return params_; }
  const std::deque<Parameter>& parameters() const { return params_; }

  /// Sets every trainable gradient to zeros of the parameter's shape.
  void zero_grad();
  double grad_norm() const;
  void scale_grads(double factor);
  std::size_t trainable_count() const;

  std::int64_t adam_steps() const { return adam_steps_; }
  void set_adam_steps(std::int64_t steps) { adam_steps_ = steps; }

 private:
  void reindex();

  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t adam_steps_ = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every trainable parameter.
/// Throws MissingGradient when a trainable parameter has no gradient.
void adam_step(ParamStore& store, double lr, const AdamConfig& config = {});

}  // namespace molgen::tensor

// SPDX-License-Identifier: Apache-2.0

#include "molgen/tensor/param_store.hpp"

#include <cmath>

namespace molgen::tensor {

ParamStore::ParamStore(const ParamStore& other)
    : params_(other.params_), adam_steps_(other.adam_steps_) {
  reindex();
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    params_ = other.params_;
    adam_steps_ = other.adam_steps_;
    reindex();
  }
  return *this;
}

void ParamStore::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

Parameter& ParamStore::add(std::string name, Tensor init, bool trainable) {
  if (index_.count(name)) throw Error("duplicate parameter name " + name);
  index_[name] = params_.size();
  Parameter p;
  p.name = std::move(name);
  p.value = std::move(init);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParamStore::find(std::string_view name) {
  const auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParamStore::find(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParamStore::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw Error("unknown parameter " + std::string(name));
}

const Parameter& ParamStore::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw Error("unknown parameter " + std::string(name));
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor::zeros_like(p.value);
    } else {
      p.grad.fill(0.0);
    }
  }
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    if (!p.trainable) continue;
    for (const double g : p.grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

void ParamStore::scale_grads(double factor) {
  for (auto& p : params_) {
    if (!p.trainable) continue;
    for (double& g : p.grad.data()) g *= factor;
  }
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.trainable ? p.value.size() : 0;
  return n;
}

void adam_step(ParamStore& store, double lr, const AdamConfig& config) {
  for (const auto& p : store.parameters()) {
    if (p.trainable && p.grad.shape() != p.value.shape()) {
      throw MissingGradient("parameter " + p.name + " has no gradient");
    }
  }
  const std::int64_t t = store.adam_steps() + 1;
  store.set_adam_steps(t);
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& p : store.parameters()) {
    if (!p.trainable) continue;
    if (p.adam_m.shape() != p.value.shape()) p.adam_m = Tensor::zeros_like(p.value);
    if (p.adam_v.shape() != p.value.shape()) p.adam_v = Tensor::zeros_like(p.value);
    double* w = p.value.ptr();
    double* m = p.adam_m.ptr();
    double* v = p.adam_v.ptr();
    const double* g = p.grad.ptr();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

}  // namespace molgen::tensor

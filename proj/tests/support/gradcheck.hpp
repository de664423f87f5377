// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for reverse-mode gradients, plus a catalog
// of randomized per-op checks shared by the unit tests and the acceptance
// binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "molgen/tensor/tape.hpp"
#include "molgen/util/rng.hpp"

namespace molgen::testing {

using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

/// Builds a scalar loss from leaf variables recorded on `tape`.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> leaves)>;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

/// Random values with |v| >= margin, away from ReLU's kink.
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& v : t.data()) v = v >= 0 ? v + margin : v - margin;
  return t;
}

/// sum(out * w) for a fixed random w, so every output element matters with a
/// distinct weight.
inline Var weighted_sum(Var out, Rng& rng) {
  Tape& tape = *out.tape;
  return tensor::sum(tensor::mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

/// max |analytic - numeric| / max(max |numeric|, 1e-8) over every element of
/// every input.
inline double gradient_error(const std::vector<Tensor>& inputs, const LossBuilder& build,
                             double step = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.variable(t));
    tape.backward(build(tape, leaves));
    for (const Var& v : leaves) analytic.push_back(tape.grad(v));
  }
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<Var> leaves;
    for (const Tensor& t : values) leaves.push_back(tape.constant(t));
    return build(tape, leaves).value().item();
  };
  double worst = 0.0, scale = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double x = inputs[a][i];
      probe[a][i] = x + step;
      const double up = evaluate(probe);
      probe[a][i] = x - step;
      const double down = evaluate(probe);
      probe[a][i] = x;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, std::abs(analytic[a][i] - numeric));
      scale = std::max(scale, std::abs(numeric));
    }
  }
  return worst / std::max(scale, 1e-8);
}

struct OpCheck {
  std::string name;
  /// One randomized trial; returns its relative error.
  std::function<double(Rng&)> trial;
};

inline std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 8) {
  return lo + uniform_index(rng, hi - lo + 1);
}

/// One entry per differentiable tensor op, with random shapes <= 8 per dim.
inline std::vector<OpCheck> op_catalog() {
  using namespace tensor;
  std::vector<OpCheck> ops;
  auto binary = [&ops](std::string name, Var (*op)(Var, Var), double lo = -1.0, double hi = 1.0) {
    ops.push_back({name, [op, lo, hi](Rng& rng) {
                     const Shape s{dim(rng), dim(rng)};
                     Rng wrng = make_rng(rng(), 1);
                     return gradient_error({random_tensor(s, rng), random_tensor(s, rng, lo, hi)},
                                           [&](Tape&, std::span<const Var> v) {
                                             Rng w = wrng;
                                             return weighted_sum(op(v[0], v[1]), w);
                                           });
                   }});
  };
  auto unary = [&ops](std::string name, std::function<Var(Var)> op, bool avoid_zero = false) {
    ops.push_back({name, [op, avoid_zero](Rng& rng) {
                     const Shape s{dim(rng), dim(rng)};
                     Rng wrng = make_rng(rng(), 1);
                     const Tensor x = avoid_zero ? random_away_from_zero(s, rng) : random_tensor(s, rng);
                     return gradient_error({x}, [&](Tape&, std::span<const Var> v) {
                       Rng w = wrng;
                       return weighted_sum(op(v[0]), w);
                     });
                   }});
  };

  ops.push_back({"matmul", [](Rng& rng) {
                   const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
                   Rng wrng = make_rng(rng(), 1);
                   return gradient_error({random_tensor({m, k}, rng), random_tensor({k, n}, rng)},
                                         [&](Tape&, std::span<const Var> v) {
                                           Rng w = wrng;
                                           return weighted_sum(matmul(v[0], v[1]), w);
                                         });
                 }});
  binary("add", tensor::add);
  binary("sub", tensor::sub);
  binary("mul", tensor::mul);
  binary("div", tensor::div, 0.5, 2.0);
  ops.push_back({"add_bias", [](Rng& rng) {
                   const std::size_t r = dim(rng), c = dim(rng);
                   Rng wrng = make_rng(rng(), 1);
                   return gradient_error({random_tensor({r, c}, rng), random_tensor({c}, rng)},
                                         [&](Tape&, std::span<const Var> v) {
                                           Rng w = wrng;
                                           return weighted_sum(add_bias(v[0], v[1]), w);
                                         });
                 }});
  unary("scale", [](Var x) { return scale(x, -1.7); });
  unary("add_scalar", [](Var x) { return add_scalar(x, 0.3); });
  unary("relu", [](Var x) { return relu(x); }, true);
  unary("sigmoid", [](Var x) { return sigmoid(x); });
  unary("exp", [](Var x) { return tensor::exp(x); });
  unary("square", [](Var x) { return square(x); });
  unary("sum", [](Var x) { return sum(x); });
  unary("mean", [](Var x) { return mean(x); });
  unary("reshape", [](Var x) { return reshape(x, {x.value().size()}); });
  ops.push_back({"gather_rows", [](Rng& rng) {
                   const std::size_t r = dim(rng), c = dim(rng), out = dim(rng);
                   std::vector<std::uint32_t> idx;
                   for (std::size_t i = 0; i < out; ++i) idx.push_back(static_cast<std::uint32_t>(uniform_index(rng, r)));
                   const Index index = make_index(idx);
                   Rng wrng = make_rng(rng(), 1);
                   return gradient_error({random_tensor({r, c}, rng)}, [&](Tape&, std::span<const Var> v) {
                     Rng w = wrng;
                     return weighted_sum(gather_rows(v[0], index), w);
                   });
                 }});
  ops.push_back({"segment_sum", [](Rng& rng) {
                   const std::size_t r = dim(rng), c = dim(rng), segs = dim(rng);
                   std::vector<std::uint32_t> idx;
                   for (std::size_t i = 0; i < r; ++i) idx.push_back(static_cast<std::uint32_t>(uniform_index(rng, segs)));
                   const Index index = make_index(idx);
                   Rng wrng = make_rng(rng(), 1);
                   return gradient_error({random_tensor({r, c}, rng)}, [&](Tape&, std::span<const Var> v) {
                     Rng w = wrng;
                     return weighted_sum(segment_sum(v[0], index, segs), w);
                   });
                 }});
  ops.push_back({"embed", [](Rng& rng) {
                   const std::size_t rows = dim(rng), c = dim(rng), out = dim(rng);
                   std::vector<std::uint32_t> idx;
                   for (std::size_t i = 0; i < out; ++i) idx.push_back(static_cast<std::uint32_t>(uniform_index(rng, rows)));
                   const Index index = make_index(idx);
                   Rng wrng = make_rng(rng(), 1);
                   return gradient_error({random_tensor({rows, c}, rng)}, [&](Tape&, std::span<const Var> v) {
                     Rng w = wrng;
                     return weighted_sum(embed(v[0], index), w);
                   });
                 }});
  ops.push_back({"batch_norm(train)", [](Rng& rng) {
                   const std::size_t r = dim(rng, 2), c = dim(rng);
                   Rng wrng = make_rng(rng(), 1);
                   return gradient_error({random_tensor({r, c}, rng, -2.0, 2.0), random_tensor({c}, rng),
                                          random_tensor({c}, rng)},
                                         [&](Tape&, std::span<const Var> v) {
                                           Rng w = wrng;
                                           BatchNormOptions opts;
                                           return weighted_sum(batch_norm(v[0], v[1], v[2], opts), w);
                                         });
                 }});
  ops.push_back({"batch_norm(eval)", [](Rng& rng) {
                   const std::size_t r = dim(rng), c = dim(rng);
                   const Tensor mean_stat = random_tensor({c}, rng);
                   const Tensor var_stat = random_tensor({c}, rng, 0.5, 2.0);
                   Rng wrng = make_rng(rng(), 1);
                   return gradient_error({random_tensor({r, c}, rng), random_tensor({c}, rng),
                                          random_tensor({c}, rng)},
                                         [&](Tape&, std::span<const Var> v) {
                                           Rng w = wrng;
                                           BatchNormOptions opts;
                                           opts.training = false;
                                           opts.eval_mean = &mean_stat;
                                           opts.eval_var = &var_stat;
                                           return weighted_sum(batch_norm(v[0], v[1], v[2], opts), w);
                                         });
                 }});
  ops.push_back({"softmax_cross_entropy", [](Rng& rng) {
                   const std::size_t r = dim(rng), c = dim(rng, 2);
                   std::vector<int> targets;
                   for (std::size_t i = 0; i < r; ++i) targets.push_back(static_cast<int>(uniform_index(rng, c)));
                   return gradient_error({random_tensor({r, c}, rng, -3.0, 3.0)},
                                         [&](Tape&, std::span<const Var> v) {
                                           return softmax_cross_entropy(v[0], targets);
                                         });
                 }});
  return ops;
}

}  // namespace molgen::testing

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "molgen/simd/kernels.hpp"
#include "molgen/tensor/tape.hpp"

namespace molgen::tensor {
namespace {

void same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw Error("operands recorded on different tapes");
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

Var finish(Tape& tape, Tensor out, const char* op, Tape::Backward backward) {
  require_finite(out, op);
  return tape.record(std::move(out), std::move(backward));
}

template <typename Forward, typename Derivative>
Var unary(Var a, const char* op, Forward f, Derivative df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::uint32_t in = a.id;
  return finish(*a.tape, std::move(out), op, [in, df](Tape& t, std::uint32_t self) {
    const Tensor& x = t.value(in);
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad_buffer(self);
    Tensor& gx = t.grad_buffer(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw ShapeMismatch("matmul: " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor out({m, n});
  simd::active().gemm_nn(m, n, k, x.ptr(), w.ptr(), out.ptr(), false);
  const std::uint32_t ia = a.id, ib = b.id;
  return finish(*a.tape, std::move(out), "matmul", [ia, ib, m, n, k](Tape& t, std::uint32_t self) {
    const auto& kern = simd::active();
    const Tensor& g = t.grad_buffer(self);
    kern.gemm_nt(m, k, n, g.ptr(), t.value(ib).ptr(), t.grad_buffer(ia).ptr(), true);
    kern.gemm_tn(k, n, m, t.value(ia).ptr(), g.ptr(), t.grad_buffer(ib).ptr(), true);
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return finish(*a.tape, std::move(out), "add", [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    const auto& kern = simd::active();
    kern.axpy(g.size(), 1.0, g.ptr(), t.grad_buffer(ia).ptr());
    kern.axpy(g.size(), 1.0, g.ptr(), t.grad_buffer(ib).ptr());
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return finish(*a.tape, std::move(out), "sub", [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    const auto& kern = simd::active();
    kern.axpy(g.size(), 1.0, g.ptr(), t.grad_buffer(ia).ptr());
    kern.axpy(g.size(), -1.0, g.ptr(), t.grad_buffer(ib).ptr());
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return finish(*a.tape, std::move(out), "mul", [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    const auto& kern = simd::active();
    // Copies guard against a == b, where both buffers alias one accumulator.
    const Tensor xa = t.value(ia);
    const Tensor xb = t.value(ib);
    kern.mul_acc(g.size(), g.ptr(), xb.ptr(), t.grad_buffer(ia).ptr());
    kern.mul_acc(g.size(), g.ptr(), xa.ptr(), t.grad_buffer(ib).ptr());
  });
}

Var div(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= y[i];
  const std::uint32_t ia = a.id, ib = b.id;
  return finish(*a.tape, std::move(out), "div", [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor g = t.grad_buffer(self);
    const Tensor xb = t.value(ib);
    const Tensor& q = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / xb[i];
    Tensor& gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * q[i] / xb[i];
  });
}

Var add_bias(Var x, Var bias) {
  same_tape(x, bias);
  const Tensor& v = x.value();
  const Tensor& b = bias.value();
  if (b.size() != v.cols()) {
    throw ShapeMismatch("add_bias: " + shape_string(v.shape()) + " + " + shape_string(b.shape()));
  }
  Tensor out = v;
  const std::size_t rows = v.rows(), cols = v.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  }
  const std::uint32_t ix = x.id, ib = bias.id;
  return finish(*x.tape, std::move(out), "add_bias", [ix, ib, rows, cols](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    const auto& kern = simd::active();
    kern.axpy(g.size(), 1.0, g.ptr(), t.grad_buffer(ix).ptr());
    Tensor& gb = t.grad_buffer(ib);
    for (std::size_t r = 0; r < rows; ++r) kern.axpy(cols, 1.0, g.ptr() + r * cols, gb.ptr());
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const std::uint32_t ia = a.id;
  return finish(*a.tape, std::move(out), "scale", [ia, factor](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    simd::active().axpy(g.size(), factor, g.ptr(), t.grad_buffer(ia).ptr());
  });
}

Var add_scalar(Var a, double value) {
  Tensor out = a.value();
  for (double& v : out.data()) v += value;
  const std::uint32_t ia = a.id;
  return finish(*a.tape, std::move(out), "add_scalar", [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    simd::active().axpy(g.size(), 1.0, g.ptr(), t.grad_buffer(ia).ptr());
  });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var gather_rows(Var a, const Index& index) {
  const Tensor& x = a.value();
  const std::size_t cols = x.cols(), rows = x.rows();
  for (const auto r : *index) {
    if (r >= rows) throw ShapeMismatch("gather_rows: index out of range");
  }
  if (index->empty()) throw ShapeMismatch("gather_rows: empty index");
  Tensor out({index->size(), cols});
  for (std::size_t r = 0; r < index->size(); ++r) {
    std::copy_n(x.ptr() + (*index)[r] * cols, cols, out.ptr() + r * cols);
  }
  const std::uint32_t ia = a.id;
  return finish(*a.tape, std::move(out), "gather_rows", [ia, index, cols](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    Tensor& gx = t.grad_buffer(ia);
    const auto& kern = simd::active();
    for (std::size_t r = 0; r < index->size(); ++r) {
      kern.axpy(cols, 1.0, g.ptr() + r * cols, gx.ptr() + (*index)[r] * cols);
    }
  });
}

Var embed(Var table, const Index& index) { return gather_rows(table, index); }

Var segment_sum(Var a, const Index& segment, std::size_t segments) {
  const Tensor& x = a.value();
  const std::size_t cols = x.cols();
  if (segment->size() != x.rows()) throw ShapeMismatch("segment_sum: segment ids per row");
  Tensor out({segments, cols});
  const auto& kern = simd::active();
  for (std::size_t r = 0; r < segment->size(); ++r) {
    const auto s = (*segment)[r];
    if (s >= segments) throw ShapeMismatch("segment_sum: segment id out of range");
    kern.axpy(cols, 1.0, x.ptr() + r * cols, out.ptr() + s * cols);
  }
  const std::uint32_t ia = a.id;
  return finish(*a.tape, std::move(out), "segment_sum", [ia, segment, cols](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    Tensor& gx = t.grad_buffer(ia);
    const auto& kern = simd::active();
    for (std::size_t r = 0; r < segment->size(); ++r) {
      kern.axpy(cols, 1.0, g.ptr() + (*segment)[r] * cols, gx.ptr() + r * cols);
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (const double v : a.value().data()) s += v;
  const std::uint32_t ia = a.id;
  return finish(*a.tape, Tensor::scalar(s), "sum", [ia](Tape& t, std::uint32_t self) {
    const double g = t.grad_buffer(self)[0];
    for (double& v : t.grad_buffer(ia).data()) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::uint32_t ia = a.id;
  return finish(*a.tape, std::move(out), "reshape", [ia](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_buffer(self);
    simd::active().axpy(g.size(), 1.0, g.ptr(), t.grad_buffer(ia).ptr());
  });
}

Var batch_norm(Var x, Var gamma, Var beta, const BatchNormOptions& options) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& in = x.value();
  const std::size_t rows = in.rows(), cols = in.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw ShapeMismatch("batch_norm: affine parameters do not match " + shape_string(in.shape()));
  }
  std::vector<double> mu(cols, 0.0), var(cols, 0.0);
  const bool use_batch = options.training || options.eval_mean == nullptr;
  if (use_batch) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) mu[c] += in[r * cols + c];
    }
    for (auto& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = in[r * cols + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(rows);
    if (options.training && options.running_mean != nullptr && options.running_var != nullptr) {
      // The biased variance, i.e. exactly what training normalised with.
      // An n/(n-1) correction shifts small graphs noticeably.
      for (std::size_t c = 0; c < cols; ++c) {
        (*options.running_mean)[c] =
            options.momentum * (*options.running_mean)[c] + (1.0 - options.momentum) * mu[c];
        (*options.running_var)[c] =
            options.momentum * (*options.running_var)[c] + (1.0 - options.momentum) * var[c];
      }
    }
  } else {
    for (std::size_t c = 0; c < cols; ++c) {
      mu[c] = (*options.eval_mean)[c];
      var[c] = (*options.eval_var)[c];
    }
  }
  std::vector<double> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + options.eps);

  Tensor xhat(in.shape());
  Tensor out(in.shape());
  const Tensor& g = gamma.value();
  const Tensor& b = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      xhat[i] = (in[i] - mu[c]) * inv_std[c];
      out[i] = g[c] * xhat[i] + b[c];
    }
  }
  const std::uint32_t ix = x.id, ig = gamma.id, ib = beta.id;
  return finish(*x.tape, std::move(out), "batch_norm",
                [ix, ig, ib, rows, cols, use_batch, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
                  const Tensor& dy = t.grad_buffer(self);
                  const Tensor& gam = t.value(ig);
                  std::vector<double> sum_dxhat(cols, 0.0), sum_dxhat_xhat(cols, 0.0);
                  Tensor& dgamma = t.grad_buffer(ig);
                  Tensor& dbeta = t.grad_buffer(ib);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      const std::size_t i = r * cols + c;
                      dgamma[c] += dy[i] * xhat[i];
                      dbeta[c] += dy[i];
                      const double dxh = dy[i] * gam[c];
                      sum_dxhat[c] += dxh;
                      sum_dxhat_xhat[c] += dxh * xhat[i];
                    }
                  }
                  Tensor& dx = t.grad_buffer(ix);
                  const double n = static_cast<double>(rows);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      const std::size_t i = r * cols + c;
                      const double dxh = dy[i] * gam[c];
                      if (use_batch) {
                        dx[i] += inv_std[c] / n *
                                 (n * dxh - sum_dxhat[c] - xhat[i] * sum_dxhat_xhat[c]);
                      } else {
                        dx[i] += dxh * inv_std[c];
                      }
                    }
                  }
                });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& z = logits.value();
  const std::size_t rows = z.rows(), cols = z.cols();
  if (targets.size() != rows) throw ShapeMismatch("softmax_cross_entropy: one target per row");
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int target = targets[r];
    if (target < 0 || static_cast<std::size_t>(target) >= cols) {
      throw ShapeMismatch("softmax_cross_entropy: target out of range");
    }
    const double* row = z.ptr() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double norm = 0.0;
    for (std::size_t c = 0; c < cols; ++c) norm += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - mx) / norm;
    loss += -(row[target] - mx - std::log(norm));
  }
  loss /= static_cast<double>(rows);
  std::vector<int> labels(targets.begin(), targets.end());
  const std::uint32_t iz = logits.id;
  return finish(*logits.tape, Tensor::scalar(loss), "softmax_cross_entropy",
                [iz, rows, cols, labels = std::move(labels), probs = std::move(probs)](
                    Tape& t, std::uint32_t self) {
                  const double g = t.grad_buffer(self)[0] / static_cast<double>(rows);
                  Tensor& dz = t.grad_buffer(iz);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      const double onehot = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
                      dz[r * cols + c] += g * (probs[r * cols + c] - onehot);
                    }
                  }
                });
}

}  // namespace molgen::tensor

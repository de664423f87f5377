// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma. Nothing in this file may run before the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <cstring>

#include "molgen/simd/kernels.hpp"

namespace molgen::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// One row of C (+)= a_row * B where a_row is read with stride `astride`.
inline void row_times_matrix(std::size_t n, std::size_t k, const double* a,
                             std::size_t astride, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    __m256d c1 = _mm256_loadu_pd(c + j + 4);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_broadcast_sd(a + p * astride);
      c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j), c0);
      c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j + 4), c1);
    }
    _mm256_storeu_pd(c + j, c0);
    _mm256_storeu_pd(c + j + 4, c1);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    for (std::size_t p = 0; p < k; ++p) {
      c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p * astride),
                           _mm256_loadu_pd(b + p * n + j), c0);
    }
    _mm256_storeu_pd(c + j, c0);
  }
  for (; j < n; ++j) {
    double s = c[j];
    for (std::size_t p = 0; p < k; ++p) s += a[p * astride] * b[p * n + j];
    c[j] = s;
  }
}

inline void tail_rows(std::size_t n, std::size_t j0, std::size_t k,
                      const double* a, std::size_t astride, const double* b,
                      double* c) {
  for (std::size_t j = j0; j < n; ++j) {
    double s = c[j];
    for (std::size_t p = 0; p < k; ++p) s += a[p * astride] * b[p * n + j];
    c[j] = s;
  }
}

// Shared driver: A element (i, p) lives at a[i * arow + p * astride].
void gemm_generic(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t arow, std::size_t astride, const double* b,
                  double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* ai = a + i * arow;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = _mm256_loadu_pd(ci + j), c01 = _mm256_loadu_pd(ci + j + 4);
      __m256d c10 = _mm256_loadu_pd(ci + n + j),
              c11 = _mm256_loadu_pd(ci + n + j + 4);
      __m256d c20 = _mm256_loadu_pd(ci + 2 * n + j),
              c21 = _mm256_loadu_pd(ci + 2 * n + j + 4);
      __m256d c30 = _mm256_loadu_pd(ci + 3 * n + j),
              c31 = _mm256_loadu_pd(ci + 3 * n + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
        const double* ap = ai + p * astride;
        __m256d av = _mm256_broadcast_sd(ap);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(ap + arow);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(ap + 2 * arow);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(ap + 3 * arow);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      _mm256_storeu_pd(ci + j, c00);
      _mm256_storeu_pd(ci + j + 4, c01);
      _mm256_storeu_pd(ci + n + j, c10);
      _mm256_storeu_pd(ci + n + j + 4, c11);
      _mm256_storeu_pd(ci + 2 * n + j, c20);
      _mm256_storeu_pd(ci + 2 * n + j + 4, c21);
      _mm256_storeu_pd(ci + 3 * n + j, c30);
      _mm256_storeu_pd(ci + 3 * n + j + 4, c31);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_loadu_pd(ci + j);
      __m256d c1 = _mm256_loadu_pd(ci + n + j);
      __m256d c2 = _mm256_loadu_pd(ci + 2 * n + j);
      __m256d c3 = _mm256_loadu_pd(ci + 3 * n + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * n + j);
        const double* ap = ai + p * astride;
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap), bv, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + arow), bv, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + 2 * arow), bv, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + 3 * arow), bv, c3);
      }
      _mm256_storeu_pd(ci + j, c0);
      _mm256_storeu_pd(ci + n + j, c1);
      _mm256_storeu_pd(ci + 2 * n + j, c2);
      _mm256_storeu_pd(ci + 3 * n + j, c3);
    }
    if (j < n) {
      for (std::size_t r = 0; r < 4; ++r) {
        tail_rows(n, j, k, ai + r * arow, astride, b, ci + r * n);
      }
    }
  }
  for (; i < m; ++i) {
    row_times_matrix(n, k, a + i * arow, astride, b, c + i * n);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  gemm_generic(m, n, k, a, k, 1, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  gemm_generic(m, n, k, a, 1, m, b, c);
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4),
                         s1);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(ai + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 += ai[p] * b0[p];
        r1 += ai[p] * b1[p];
        r2 += ai[p] * b2[p];
        r3 += ai[p] * b3[p];
      }
      double* ci = c + i * n + j;
      if (accumulate) {
        ci[0] += r0;
        ci[1] += r1;
        ci[2] += r2;
        ci[3] += r3;
      } else {
        ci[0] = r0;
        ci[1] = r1;
        ci[2] = r2;
        ci[3] = r3;
      }
    }
    for (; j < n; ++j) {
      const double r = dot(k, ai, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + r : r;
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul_acc(std::size_t n, const double* x, const double* w, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_fmadd_pd(_mm256_loadu_pd(x + i),
                                     _mm256_loadu_pd(w + i),
                                     _mm256_loadu_pd(out + i)));
  }
  for (; i < n; ++i) out[i] += x[i] * w[i];
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{Isa::kAvx2, "avx2", gemm_nn, gemm_nt,
                                 gemm_tn,    axpy,   dot,     mul_acc};
  return table;
}

}  // namespace molgen::simd

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

// Dense double-precision kernels behind a runtime-dispatched table.
//
// Every routine has a portable scalar reference in kernels_scalar.cpp; the
// AVX2/FMA variants in kernels_avx2.cpp are compiled separately with the
// matching target flags and only selected when the CPU reports support.
// All matrices are row-major with densely packed rows.

namespace molgen::simd {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  /// C[M x N] (+)= A[M x K] * B[K x N]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  /// C[M x N] (+)= A[M x K] * B[N x K]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  /// C[M x N] (+)= A[K x M]^T * B[K x N]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  double (*dot)(std::size_t n, const double* x, const double* y);
  /// y[i] = x[i] * w[i] summed into out, i.e. out += x .* w
  void (*mul_acc)(std::size_t n, const double* x, const double* w, double* out);
};

const KernelTable& scalar_kernels();

/// nullptr when the build has no AVX2 variant or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

/// The table used by the tensor library. Chosen once at first use: AVX2 when
/// available unless the environment sets MOLGEN_SIMD=scalar.
const KernelTable& active();

/// Overrides the runtime choice; returns false if `isa` is unavailable.
bool select(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace molgen::simd

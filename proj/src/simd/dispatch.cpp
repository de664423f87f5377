// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "molgen/simd/kernels.hpp"

namespace molgen::simd {

#if defined(MOLGEN_HAVE_AVX2)
const KernelTable& avx2_kernel_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(MOLGEN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__)) && \
    (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_choice() {
  const char* env = std::getenv("MOLGEN_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) {
    return &scalar_kernels();
  }
  if (const KernelTable* avx = avx2_kernels()) return avx;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_choice()};
  return table;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(MOLGEN_HAVE_AVX2)
  static const bool supported = cpu_has_avx2();
  return supported ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(Isa isa) {
  const KernelTable* table =
      isa == Isa::kScalar ? &scalar_kernels() : avx2_kernels();
  if (table == nullptr) return false;
  current().store(table, std::memory_order_release);
  return true;
}

std::string_view isa_name(Isa isa) {
  return isa == Isa::kScalar ? "scalar" : "avx2";
}

}  // namespace molgen::simd

// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <string>

#include "csplade/kernels.hpp"

namespace csplade::kernels {

namespace {

constexpr KernelTable kScalar{Isa::Scalar, scalar::dot_f32, scalar::axpy_f32,
                              scalar::max_inplace_f32, scalar::dequant_i8};

#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2{Isa::Avx2, avx2::dot_f32, avx2::axpy_f32, avx2::max_inplace_f32,
                            avx2::dequant_i8};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

#if defined(__aarch64__) || defined(__ARM_NEON)
constexpr KernelTable kNeon{Isa::Neon, neon::dot_f32, neon::axpy_f32, neon::max_inplace_f32,
                            neon::dequant_i8};
#endif

const KernelTable& select() {
  const char* env = std::getenv("CSPLADE_SIMD");
  if (env != nullptr && std::string(env) == "scalar") return kScalar;
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2()) return kAvx2;
#endif
#if defined(__aarch64__) || defined(__ARM_NEON)
  return kNeon;
#endif
  return kScalar;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return &kScalar;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      if (cpu_has_avx2()) return &kAvx2;
#endif
      return nullptr;
    case Isa::Neon:
#if defined(__aarch64__) || defined(__ARM_NEON)
      return &kNeon;
#endif
      return nullptr;
  }
  return nullptr;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
  }
  return "unknown";
}

}  // namespace csplade::kernels

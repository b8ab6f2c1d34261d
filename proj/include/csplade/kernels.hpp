// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

// Data-parallel inner loops shared by the encoder, the quantized path and the
// pooling code. Every kernel has a portable scalar reference; vector variants
// are picked once at startup from the CPU feature set.
namespace csplade::kernels {

enum class Isa { Scalar, Avx2, Neon };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  // acc[i] = max(acc[i], x[i])
  void (*max_inplace_f32)(float* acc, const float* x, std::size_t n);
  // out[i] = scale * q[i]
  void (*dequant_i8)(const std::int8_t* q, float scale, float* out, std::size_t n);
};

// Reference implementations. Always available; used as the equivalence oracle.
namespace scalar {
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void max_inplace_f32(float* acc, const float* x, std::size_t n);
void dequant_i8(const std::int8_t* q, float scale, float* out, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void max_inplace_f32(float* acc, const float* x, std::size_t n);
void dequant_i8(const std::int8_t* q, float scale, float* out, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__) || defined(__ARM_NEON)
namespace neon {
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void max_inplace_f32(float* acc, const float* x, std::size_t n);
void dequant_i8(const std::int8_t* q, float scale, float* out, std::size_t n);
}  // namespace neon
#endif

const KernelTable& scalar_table();

// Best table for this CPU. CSPLADE_SIMD=scalar forces the reference kernels.
const KernelTable& active();

// Table for a specific ISA, or nullptr if this build/CPU cannot run it.
const KernelTable* table_for(Isa isa);

std::string_view isa_name(Isa isa);

// Double-precision paths (gradient checking) always use the scalar loops.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
inline float dot(const float* a, const float* b, std::size_t n) {
  return active().dot_f32(a, b, n);
}
inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  active().axpy_f32(alpha, x, y, n);
}

// Row-major GEMM variants built on dot/axpy. C is accumulated into.
//   gemm_nn: C[m,n] += A[m,k] * B[k,n]
//   gemm_nt: C[m,n] += A[m,k] * B[n,k]^T
//   gemm_tn: C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      if (arow[p] != T(0)) axpy(arow[p], b + p * n, crow, n);
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += dot(arow, b + j * k, k);
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (arow[i] != T(0)) axpy(arow[i], brow, c + i * n, n);
    }
  }
}

}  // namespace csplade::kernels

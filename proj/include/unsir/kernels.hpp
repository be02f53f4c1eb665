#pragma once

#include <cstdint>

// f32 inner loops behind every tensor op. Each kernel has a scalar reference
// implementation and an AVX2+FMA variant; the active set is picked once at
// startup from CPUID and can be pinned to scalar with force_scalar() or the
// environment variable UNSIR_SIMD=scalar. Equivalence of the two paths is
// asserted by tests/test_kernels.cpp.
namespace unsir::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();
const char* backend_name();

// Pin the scalar reference path (tests; also honors UNSIR_SIMD=scalar).
void force_scalar(bool on);

// c[m x n] = a[m x k] * b[k x n], or += when accumulate is set.
void gemm(const float* a, const float* b, float* c, int m, int k, int n,
          bool accumulate);

// dst[cols x rows] = transpose of src[rows x cols].
void transpose(const float* src, float* dst, int rows, int cols);

// y += alpha * x
void axpy(float alpha, const float* x, float* y, int64_t n);

// x *= alpha
void scale(float alpha, float* x, int64_t n);

// y = max(x, 0)
void relu_fwd(const float* x, float* y, int64_t n);

// dx += dy where x > 0 (subgradient 0 at 0)
void relu_bwd(const float* x, const float* dy, float* dx, int64_t n);

float dot(const float* a, const float* b, int64_t n);
float sum(const float* x, int64_t n);
float sum_squares(const float* x, int64_t n);

// Scalar reference kernels, exposed for equivalence testing.
namespace ref {
void gemm(const float* a, const float* b, float* c, int m, int k, int n,
          bool accumulate);
void axpy(float alpha, const float* x, float* y, int64_t n);
void scale(float alpha, float* x, int64_t n);
void relu_fwd(const float* x, float* y, int64_t n);
void relu_bwd(const float* x, const float* dy, float* dx, int64_t n);
float dot(const float* a, const float* b, int64_t n);
float sum(const float* x, int64_t n);
float sum_squares(const float* x, int64_t n);
}  // namespace ref

}  // namespace unsir::kernels

// AVX2+FMA kernel variants. Compiled with per-function target attributes so
// the translation unit builds on any x86-64 toolchain; callers must gate on
// runtime CPU support (see kernels.cpp).

#include "unsir/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#define UNSIR_AVX2 __attribute__((target("avx2,fma")))

namespace unsir::kernels::avx2 {

UNSIR_AVX2
static inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    return _mm_cvtss_f32(s);
}

UNSIR_AVX2
void gemm(const float* a, const float* b, float* c, int m, int k, int n,
          bool accumulate) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<int64_t>(i) * n;
        if (!accumulate) {
            int j = 0;
            const __m256 z = _mm256_setzero_ps();
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, z);
            for (; j < n; ++j) crow[j] = 0.0f;
        }
        const float* arow = a + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<int64_t>(p) * n;
            const __m256 va = _mm256_set1_ps(av);
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 vc = _mm256_loadu_ps(crow + j);
                vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
                _mm256_storeu_ps(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

UNSIR_AVX2
void axpy(float alpha, const float* x, float* y, int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

UNSIR_AVX2
void scale(float alpha, float* x, int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    }
    for (; i < n; ++i) x[i] *= alpha;
}

UNSIR_AVX2
void relu_fwd(const float* x, float* y, int64_t n) {
    const __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

UNSIR_AVX2
void relu_bwd(const float* x, const float* dy, float* dx, int64_t n) {
    const __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
        __m256 add = _mm256_and_ps(_mm256_loadu_ps(dy + i), mask);
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), add));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0f) dx[i] += dy[i];
    }
}

UNSIR_AVX2
float dot(const float* a, const float* b, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    }
    float s = hsum256(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

UNSIR_AVX2
float sum(const float* x, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

UNSIR_AVX2
float sum_squares(const float* x, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        acc = _mm256_fmadd_ps(v, v, acc);
    }
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

}  // namespace unsir::kernels::avx2

#endif  // x86-64

#include "unsir/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace unsir::kernels {

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void gemm(const float*, const float*, float*, int, int, int, bool);
void axpy(float, const float*, float*, int64_t);
void scale(float, float*, int64_t);
void relu_fwd(const float*, float*, int64_t);
void relu_bwd(const float*, const float*, float*, int64_t);
float dot(const float*, const float*, int64_t);
float sum(const float*, int64_t);
float sum_squares(const float*, int64_t);
}  // namespace avx2
#endif

namespace {

std::atomic<bool> g_force_scalar{false};

bool env_forces_scalar() {
    const char* v = std::getenv("UNSIR_SIMD");
    return v != nullptr && std::strcmp(v, "scalar") == 0;
}

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
#if defined(__GNUC__) || defined(__clang__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#endif
#endif
    return false;
}

bool use_avx2() {
    static const bool available = cpu_has_avx2() && !env_forces_scalar();
    return available && !g_force_scalar.load(std::memory_order_relaxed);
}

}  // namespace

Backend active_backend() {
    return use_avx2() ? Backend::avx2 : Backend::scalar;
}

const char* backend_name() {
    return use_avx2() ? "avx2" : "scalar";
}

void force_scalar(bool on) {
    g_force_scalar.store(on, std::memory_order_relaxed);
}

void gemm(const float* a, const float* b, float* c, int m, int k, int n,
          bool accumulate) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) {
        avx2::gemm(a, b, c, m, k, n, accumulate);
        return;
    }
#endif
    ref::gemm(a, b, c, m, k, n, accumulate);
}

void transpose(const float* src, float* dst, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            dst[static_cast<int64_t>(c) * rows + r] =
                src[static_cast<int64_t>(r) * cols + c];
        }
    }
}

void axpy(float alpha, const float* x, float* y, int64_t n) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) {
        avx2::axpy(alpha, x, y, n);
        return;
    }
#endif
    ref::axpy(alpha, x, y, n);
}

void scale(float alpha, float* x, int64_t n) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) {
        avx2::scale(alpha, x, n);
        return;
    }
#endif
    ref::scale(alpha, x, n);
}

void relu_fwd(const float* x, float* y, int64_t n) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) {
        avx2::relu_fwd(x, y, n);
        return;
    }
#endif
    ref::relu_fwd(x, y, n);
}

void relu_bwd(const float* x, const float* dy, float* dx, int64_t n) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) {
        avx2::relu_bwd(x, dy, dx, n);
        return;
    }
#endif
    ref::relu_bwd(x, dy, dx, n);
}

float dot(const float* a, const float* b, int64_t n) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) return avx2::dot(a, b, n);
#endif
    return ref::dot(a, b, n);
}

float sum(const float* x, int64_t n) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) return avx2::sum(x, n);
#endif
    return ref::sum(x, n);
}

float sum_squares(const float* x, int64_t n) {
#if defined(__x86_64__) || defined(_M_X64)
    if (use_avx2()) return avx2::sum_squares(x, n);
#endif
    return ref::sum_squares(x, n);
}

}  // namespace unsir::kernels

#pragma once

#include <cstddef>

// Data-parallel inner loops behind the network math. The scalar kernels define
// the reference arithmetic: fixed lane-blocked accumulation, fixed reduction
// tree, no FMA contraction. SIMD variants must reproduce the scalar results
// bit-for-bit (enforced by tests/test_kernels.cpp), so the runtime backend
// choice never changes numerical output.
//
// Backend selection happens once per process: the GLYRL_KERNELS environment
// variable ("scalar", "avx2", "auto") overrides CPU detection.

namespace glyrl::kernels {

enum class Backend { scalar, avx2 };

Backend active();
void force_backend(Backend b);  // for tests/benchmarks
const char* backend_name(Backend b);

namespace scalar {

float dot(const float* a, const float* b, size_t n);
double dot(const double* a, const double* b, size_t n);

// y = W x + b, W row-major [rows x cols]
void matvec_bias(const float* w, const float* x, const float* b, float* y, size_t rows, size_t cols);
void matvec_bias(const double* w, const double* x, const double* b, double* y, size_t rows, size_t cols);

// dx = W^T dy (dx overwritten)
void matvec_t(const float* w, const float* dy, float* dx, size_t rows, size_t cols);
void matvec_t(const double* w, const double* dy, double* dx, size_t rows, size_t cols);

// dW += dy x^T
void outer_acc(float* dw, const float* dy, const float* x, size_t rows, size_t cols);
void outer_acc(double* dw, const double* dy, const double* x, size_t rows, size_t cols);

// y += a x
void axpy(float* y, float a, const float* x, size_t n);
void axpy(double* y, double a, const double* x, size_t n);

// dst = tau src + (1 - tau) dst
void lerp_to(float* dst, const float* src, float tau, size_t n);
void lerp_to(double* dst, const double* src, double tau, size_t n);

void relu(const float* x, float* y, size_t n);
void relu(const double* x, double* y, size_t n);

// dx = (pre > 0) ? dy : 0
void relu_backward(const float* pre, const float* dy, float* dx, size_t n);
void relu_backward(const double* pre, const double* dy, double* dx, size_t n);

// One Adam update over a flat tensor; bc1/bc2 are the precomputed bias
// corrections 1/(1-beta1^t), 1/(1-beta2^t).
void adam_step(float* p, const float* g, float* m, float* v, size_t n,
               float lr, float beta1, float beta2, float eps, float bc1, float bc2);
void adam_step(double* p, const double* g, double* m, double* v, size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2);

// Reductions accumulate in 64-bit regardless of input precision.
double reduce_sum(const float* x, size_t n);
double reduce_sum(const double* x, size_t n);
double reduce_abs_sum(const float* x, size_t n);
double reduce_abs_sum(const double* x, size_t n);
double reduce_sq_sum(const float* x, size_t n);
double reduce_sq_sum(const double* x, size_t n);

}  // namespace scalar

#if defined(GLYRL_HAVE_AVX2)
namespace avx2 {

float dot(const float* a, const float* b, size_t n);
double dot(const double* a, const double* b, size_t n);
void matvec_bias(const float* w, const float* x, const float* b, float* y, size_t rows, size_t cols);
void matvec_bias(const double* w, const double* x, const double* b, double* y, size_t rows, size_t cols);
void matvec_t(const float* w, const float* dy, float* dx, size_t rows, size_t cols);
void matvec_t(const double* w, const double* dy, double* dx, size_t rows, size_t cols);
void outer_acc(float* dw, const float* dy, const float* x, size_t rows, size_t cols);
void outer_acc(double* dw, const double* dy, const double* x, size_t rows, size_t cols);
void axpy(float* y, float a, const float* x, size_t n);
void axpy(double* y, double a, const double* x, size_t n);
void lerp_to(float* dst, const float* src, float tau, size_t n);
void lerp_to(double* dst, const double* src, double tau, size_t n);
void relu(const float* x, float* y, size_t n);
void relu(const double* x, double* y, size_t n);
void relu_backward(const float* pre, const float* dy, float* dx, size_t n);
void relu_backward(const double* pre, const double* dy, double* dx, size_t n);
void adam_step(float* p, const float* g, float* m, float* v, size_t n,
               float lr, float beta1, float beta2, float eps, float bc1, float bc2);
void adam_step(double* p, const double* g, double* m, double* v, size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2);
double reduce_sum(const float* x, size_t n);
double reduce_sum(const double* x, size_t n);
double reduce_abs_sum(const float* x, size_t n);
double reduce_abs_sum(const double* x, size_t n);
double reduce_sq_sum(const float* x, size_t n);
double reduce_sq_sum(const double* x, size_t n);

}  // namespace avx2
#endif

// Dispatched entry points.
#if defined(GLYRL_HAVE_AVX2)
#define GLYRL_DISPATCH(fn, ...) \
    return active() == Backend::avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__)
#define GLYRL_DISPATCH_VOID(fn, ...)                \
    if (active() == Backend::avx2) {                \
        avx2::fn(__VA_ARGS__);                      \
    } else {                                        \
        scalar::fn(__VA_ARGS__);                    \
    }
#else
#define GLYRL_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#define GLYRL_DISPATCH_VOID(fn, ...) scalar::fn(__VA_ARGS__)
#endif

template <typename T>
inline T dot(const T* a, const T* b, size_t n) { GLYRL_DISPATCH(dot, a, b, n); }

template <typename T>
inline void matvec_bias(const T* w, const T* x, const T* b, T* y, size_t rows, size_t cols) {
    GLYRL_DISPATCH_VOID(matvec_bias, w, x, b, y, rows, cols);
}

template <typename T>
inline void matvec_t(const T* w, const T* dy, T* dx, size_t rows, size_t cols) {
    GLYRL_DISPATCH_VOID(matvec_t, w, dy, dx, rows, cols);
}

template <typename T>
inline void outer_acc(T* dw, const T* dy, const T* x, size_t rows, size_t cols) {
    GLYRL_DISPATCH_VOID(outer_acc, dw, dy, x, rows, cols);
}

template <typename T>
inline void axpy(T* y, T a, const T* x, size_t n) { GLYRL_DISPATCH_VOID(axpy, y, a, x, n); }

template <typename T>
inline void lerp_to(T* dst, const T* src, T tau, size_t n) { GLYRL_DISPATCH_VOID(lerp_to, dst, src, tau, n); }

template <typename T>
inline void relu(const T* x, T* y, size_t n) { GLYRL_DISPATCH_VOID(relu, x, y, n); }

template <typename T>
inline void relu_backward(const T* pre, const T* dy, T* dx, size_t n) {
    GLYRL_DISPATCH_VOID(relu_backward, pre, dy, dx, n);
}

template <typename T>
inline void adam_step(T* p, const T* g, T* m, T* v, size_t n,
                      T lr, T beta1, T beta2, T eps, T bc1, T bc2) {
    GLYRL_DISPATCH_VOID(adam_step, p, g, m, v, n, lr, beta1, beta2, eps, bc1, bc2);
}

template <typename T>
inline double reduce_sum(const T* x, size_t n) { GLYRL_DISPATCH(reduce_sum, x, n); }

template <typename T>
inline double reduce_abs_sum(const T* x, size_t n) { GLYRL_DISPATCH(reduce_abs_sum, x, n); }

template <typename T>
inline double reduce_sq_sum(const T* x, size_t n) { GLYRL_DISPATCH(reduce_sq_sum, x, n); }

#undef GLYRL_DISPATCH
#undef GLYRL_DISPATCH_VOID

}  // namespace glyrl::kernels

#include "glyrl/kernels.hpp"

#include <algorithm>
#include <cmath>

// Reference kernels. The accumulation layout is frozen so the AVX2 variants
// can reproduce it exactly: dot products accumulate in two lane-sets of
// vector-width partial sums (16 floats / 8 doubles per block), the lane sets
// are combined lane-wise, reduced with the same tree the SIMD horizontal
// reduction uses, and the remainder is folded in sequentially. Elementwise
// kernels only need matching operation order (no FMA contraction anywhere;
// the build sets -ffp-contract=off).

namespace glyrl::kernels::scalar {

namespace {

// 8 float lanes: matches extract128+add, movehl+add, shuffle+add.
inline float reduce_lanes8(const float* lane) {
    float s[4];
    for (int j = 0; j < 4; ++j) s[j] = lane[j] + lane[j + 4];
    return (s[0] + s[2]) + (s[1] + s[3]);
}

// 4 double lanes: matches extract128+add, unpackhi+add.
inline double reduce_lanes4(const double* lane) {
    return (lane[0] + lane[2]) + (lane[1] + lane[3]);
}

}  // namespace

float dot(const float* a, const float* b, size_t n) {
    float acc0[8] = {}, acc1[8] = {};
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        for (int j = 0; j < 8; ++j) acc0[j] += a[i + j] * b[i + j];
        for (int j = 0; j < 8; ++j) acc1[j] += a[i + 8 + j] * b[i + 8 + j];
    }
    float lane[8];
    for (int j = 0; j < 8; ++j) lane[j] = acc0[j] + acc1[j];
    float sum = reduce_lanes8(lane);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

double dot(const double* a, const double* b, size_t n) {
    double acc0[4] = {}, acc1[4] = {};
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 4; ++j) acc0[j] += a[i + j] * b[i + j];
        for (int j = 0; j < 4; ++j) acc1[j] += a[i + 4 + j] * b[i + 4 + j];
    }
    double lane[4];
    for (int j = 0; j < 4; ++j) lane[j] = acc0[j] + acc1[j];
    double sum = reduce_lanes4(lane);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

void matvec_bias(const float* w, const float* x, const float* b, float* y, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) y[r] = dot(w + r * cols, x, cols) + b[r];
}

void matvec_bias(const double* w, const double* x, const double* b, double* y, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) y[r] = dot(w + r * cols, x, cols) + b[r];
}

void matvec_t(const float* w, const float* dy, float* dx, size_t rows, size_t cols) {
    std::fill(dx, dx + cols, 0.0f);
    for (size_t r = 0; r < rows; ++r) axpy(dx, dy[r], w + r * cols, cols);
}

void matvec_t(const double* w, const double* dy, double* dx, size_t rows, size_t cols) {
    std::fill(dx, dx + cols, 0.0);
    for (size_t r = 0; r < rows; ++r) axpy(dx, dy[r], w + r * cols, cols);
}

void outer_acc(float* dw, const float* dy, const float* x, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) axpy(dw + r * cols, dy[r], x, cols);
}

void outer_acc(double* dw, const double* dy, const double* x, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) axpy(dw + r * cols, dy[r], x, cols);
}

void axpy(float* y, float a, const float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void axpy(double* y, double a, const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void lerp_to(float* dst, const float* src, float tau, size_t n) {
    const float omt = 1.0f - tau;
    for (size_t i = 0; i < n; ++i) dst[i] = tau * src[i] + omt * dst[i];
}

void lerp_to(double* dst, const double* src, double tau, size_t n) {
    const double omt = 1.0 - tau;
    for (size_t i = 0; i < n; ++i) dst[i] = tau * src[i] + omt * dst[i];
}

void relu(const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const float* pre, const float* dy, float* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] = pre[i] > 0.0f ? dy[i] : 0.0f;
}

void relu_backward(const double* pre, const double* dy, double* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
}

void adam_step(float* p, const float* g, float* m, float* v, size_t n,
               float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
    const float omb1 = 1.0f - beta1;
    const float omb2 = 1.0f - beta2;
    for (size_t i = 0; i < n; ++i) {
        const float gi = g[i];
        m[i] = beta1 * m[i] + omb1 * gi;
        v[i] = beta2 * v[i] + omb2 * (gi * gi);
        const float mh = m[i] * bc1;
        const float vh = v[i] * bc2;
        const float den = std::sqrt(vh) + eps;
        p[i] = p[i] - lr * (mh / den);
    }
}

void adam_step(double* p, const double* g, double* m, double* v, size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2) {
    const double omb1 = 1.0 - beta1;
    const double omb2 = 1.0 - beta2;
    for (size_t i = 0; i < n; ++i) {
        const double gi = g[i];
        m[i] = beta1 * m[i] + omb1 * gi;
        v[i] = beta2 * v[i] + omb2 * (gi * gi);
        const double mh = m[i] * bc1;
        const double vh = v[i] * bc2;
        const double den = std::sqrt(vh) + eps;
        p[i] = p[i] - lr * (mh / den);
    }
}

// Reductions widen to double before accumulating; blocks of 8 inputs feed two
// 4-lane accumulator sets so the SIMD version (4-wide cvt/loads) lines up.

namespace {

template <typename T, typename F>
double reduce_blocked(const T* x, size_t n, F f) {
    double acc0[4] = {}, acc1[4] = {};
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 4; ++j) acc0[j] += f(static_cast<double>(x[i + j]));
        for (int j = 0; j < 4; ++j) acc1[j] += f(static_cast<double>(x[i + 4 + j]));
    }
    double lane[4];
    for (int j = 0; j < 4; ++j) lane[j] = acc0[j] + acc1[j];
    double sum = reduce_lanes4(lane);
    for (; i < n; ++i) sum += f(static_cast<double>(x[i]));
    return sum;
}

struct Ident { double operator()(double v) const { return v; } };
struct Abs   { double operator()(double v) const { return std::fabs(v); } };
struct Sq    { double operator()(double v) const { return v * v; } };

}  // namespace

double reduce_sum(const float* x, size_t n)  { return reduce_blocked(x, n, Ident{}); }
double reduce_sum(const double* x, size_t n) { return reduce_blocked(x, n, Ident{}); }
double reduce_abs_sum(const float* x, size_t n)  { return reduce_blocked(x, n, Abs{}); }
double reduce_abs_sum(const double* x, size_t n) { return reduce_blocked(x, n, Abs{}); }
double reduce_sq_sum(const float* x, size_t n)  { return reduce_blocked(x, n, Sq{}); }
double reduce_sq_sum(const double* x, size_t n) { return reduce_blocked(x, n, Sq{}); }

}  // namespace glyrl::kernels::scalar

#include "glyrl/kernels.hpp"

#if defined(GLYRL_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

// AVX2 twins of the scalar reference kernels. No FMA: mul followed by add
// keeps each lane's rounding identical to the scalar code. Horizontal
// reductions follow the exact tree the scalar reduce_lanes helpers spell out.

namespace glyrl::kernels::avx2 {

namespace {

inline float hreduce8(__m256 v) {
    const __m128 lo = _mm256_castps256_ps128(v);
    const __m128 hi = _mm256_extractf128_ps(v, 1);
    const __m128 s = _mm_add_ps(lo, hi);              // lane[j] + lane[j+4]
    const __m128 t = _mm_add_ps(s, _mm_movehl_ps(s, s));  // (s0+s2, s1+s3, ..)
    const __m128 r = _mm_add_ss(t, _mm_shuffle_ps(t, t, 0x55));
    return _mm_cvtss_f32(r);
}

inline double hreduce4(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);             // (l0+l2, l1+l3)
    const __m128d r = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
    return _mm_cvtsd_f64(r);
}

}  // namespace

float dot(const float* a, const float* b, size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_add_ps(acc0, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
        acc1 = _mm256_add_ps(acc1, _mm256_mul_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8)));
    }
    float sum = hreduce8(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

double dot(const double* a, const double* b, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    double sum = hreduce4(_mm256_add_pd(acc0, acc1));
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
    const __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy(double* y, double a, const double* x, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void lerp_to(float* dst, const float* src, float tau, size_t n) {
    const float omt = 1.0f - tau;
    const __m256 vt = _mm256_set1_ps(tau);
    const __m256 vo = _mm256_set1_ps(omt);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 a = _mm256_mul_ps(vt, _mm256_loadu_ps(src + i));
        const __m256 b = _mm256_mul_ps(vo, _mm256_loadu_ps(dst + i));
        _mm256_storeu_ps(dst + i, _mm256_add_ps(a, b));
    }
    for (; i < n; ++i) dst[i] = tau * src[i] + omt * dst[i];
}

void lerp_to(double* dst, const double* src, double tau, size_t n) {
    const double omt = 1.0 - tau;
    const __m256d vt = _mm256_set1_pd(tau);
    const __m256d vo = _mm256_set1_pd(omt);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d a = _mm256_mul_pd(vt, _mm256_loadu_pd(src + i));
        const __m256d b = _mm256_mul_pd(vo, _mm256_loadu_pd(dst + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(a, b));
    }
    for (; i < n; ++i) dst[i] = tau * src[i] + omt * dst[i];
}

void relu(const float* x, float* y, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        // max(x, 0) with 0 as second operand: NaN and -0 both map to +0,
        // matching the scalar ternary.
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu(const double* x, double* y, size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const float* pre, const float* dy, float* dx, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(pre + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_and_ps(mask, _mm256_loadu_ps(dy + i)));
    }
    for (; i < n; ++i) dx[i] = pre[i] > 0.0f ? dy[i] : 0.0f;
}

void relu_backward(const double* pre, const double* dy, double* dx, size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
    }
    for (; i < n; ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
}

void adam_step(float* p, const float* g, float* m, float* v, size_t n,
               float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
    const float omb1 = 1.0f - beta1;
    const float omb2 = 1.0f - beta2;
    const __m256 vb1 = _mm256_set1_ps(beta1), vo1 = _mm256_set1_ps(omb1);
    const __m256 vb2 = _mm256_set1_ps(beta2), vo2 = _mm256_set1_ps(omb2);
    const __m256 vbc1 = _mm256_set1_ps(bc1), vbc2 = _mm256_set1_ps(bc2);
    const __m256 veps = _mm256_set1_ps(eps), vlr = _mm256_set1_ps(lr);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gi = _mm256_loadu_ps(g + i);
        __m256 mi = _mm256_loadu_ps(m + i);
        __m256 vi = _mm256_loadu_ps(v + i);
        mi = _mm256_add_ps(_mm256_mul_ps(vb1, mi), _mm256_mul_ps(vo1, gi));
        vi = _mm256_add_ps(_mm256_mul_ps(vb2, vi), _mm256_mul_ps(vo2, _mm256_mul_ps(gi, gi)));
        const __m256 mh = _mm256_mul_ps(mi, vbc1);
        const __m256 vh = _mm256_mul_ps(vi, vbc2);
        const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vh), veps);
        const __m256 upd = _mm256_mul_ps(vlr, _mm256_div_ps(mh, den));
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
    }
    for (; i < n; ++i) {
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
    const __m256d vb1 = _mm256_set1_pd(beta1), vo1 = _mm256_set1_pd(omb1);
    const __m256d vb2 = _mm256_set1_pd(beta2), vo2 = _mm256_set1_pd(omb2);
    const __m256d vbc1 = _mm256_set1_pd(bc1), vbc2 = _mm256_set1_pd(bc2);
    const __m256d veps = _mm256_set1_pd(eps), vlr = _mm256_set1_pd(lr);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gi = _mm256_loadu_pd(g + i);
        __m256d mi = _mm256_loadu_pd(m + i);
        __m256d vi = _mm256_loadu_pd(v + i);
        mi = _mm256_add_pd(_mm256_mul_pd(vb1, mi), _mm256_mul_pd(vo1, gi));
        vi = _mm256_add_pd(_mm256_mul_pd(vb2, vi), _mm256_mul_pd(vo2, _mm256_mul_pd(gi, gi)));
        const __m256d mh = _mm256_mul_pd(mi, vbc1);
        const __m256d vh = _mm256_mul_pd(vi, vbc2);
        const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(vh), veps);
        const __m256d upd = _mm256_mul_pd(vlr, _mm256_div_pd(mh, den));
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
    }
    for (; i < n; ++i) {
        const double gi = g[i];
        m[i] = beta1 * m[i] + omb1 * gi;
        v[i] = beta2 * v[i] + omb2 * (gi * gi);
        const double mh = m[i] * bc1;
        const double vh = v[i] * bc2;
        const double den = std::sqrt(vh) + eps;
        p[i] = p[i] - lr * (mh / den);
    }
}

namespace {

const __m256d kAbsMaskPd = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffll));

template <int Op>  // 0 = identity, 1 = abs, 2 = square
inline __m256d apply_pd(__m256d v) {
    if constexpr (Op == 1) return _mm256_and_pd(v, kAbsMaskPd);
    else if constexpr (Op == 2) return _mm256_mul_pd(v, v);
    else return v;
}

template <int Op>
double reduce_f32(const float* x, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, apply_pd<Op>(_mm256_cvtps_pd(_mm_loadu_ps(x + i))));
        acc1 = _mm256_add_pd(acc1, apply_pd<Op>(_mm256_cvtps_pd(_mm_loadu_ps(x + i + 4))));
    }
    double sum = hreduce4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        const double d = static_cast<double>(x[i]);
        if constexpr (Op == 1) sum += std::fabs(d);
        else if constexpr (Op == 2) sum += d * d;
        else sum += d;
    }
    return sum;
}

template <int Op>
double reduce_f64(const double* x, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, apply_pd<Op>(_mm256_loadu_pd(x + i)));
        acc1 = _mm256_add_pd(acc1, apply_pd<Op>(_mm256_loadu_pd(x + i + 4)));
    }
    double sum = hreduce4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        const double d = x[i];
        if constexpr (Op == 1) sum += std::fabs(d);
        else if constexpr (Op == 2) sum += d * d;
        else sum += d;
    }
    return sum;
}

}  // namespace

double reduce_sum(const float* x, size_t n)      { return reduce_f32<0>(x, n); }
double reduce_sum(const double* x, size_t n)     { return reduce_f64<0>(x, n); }
double reduce_abs_sum(const float* x, size_t n)  { return reduce_f32<1>(x, n); }
double reduce_abs_sum(const double* x, size_t n) { return reduce_f64<1>(x, n); }
double reduce_sq_sum(const float* x, size_t n)   { return reduce_f32<2>(x, n); }
double reduce_sq_sum(const double* x, size_t n)  { return reduce_f64<2>(x, n); }

}  // namespace glyrl::kernels::avx2

#endif  // GLYRL_HAVE_AVX2

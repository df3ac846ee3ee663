// NEON kernel variants (aarch64). Mirrors the AVX2 file: unfused mul/add and
// ties-to-even rounding keep outputs bit-identical to the scalar reference.

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>
#include <cstring>

#include "geta/kernels.hpp"

namespace geta::kernels::neon {

void add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double alpha, double* out, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), va));
    }
    for (; i < n; ++i) out[i] = a[i] * alpha;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
    }
    for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void relu(const double* a, double* out, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t v = vld1q_f64(a + i);
        const uint64x2_t mask = vcgtq_f64(v, zero);
        vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(
                               vreinterpretq_u64_f64(v), mask)));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward(const double* a, const double* g, double* out, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const uint64x2_t mask = vcgtq_f64(vld1q_f64(a + i), zero);
        vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(
                               vreinterpretq_u64_f64(vld1q_f64(g + i)), mask)));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? g[i] : 0.0;
}

void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n) {
    const float64x2_t vstep = vdupq_n_f64(step);
    const float64x2_t vclip = vdupq_n_f64(clip_max);
    const uint64x2_t sign_mask = vdupq_n_u64(0x8000000000000000ull);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t v = vld1q_f64(x + i);
        const uint64x2_t sign = vandq_u64(vreinterpretq_u64_f64(v), sign_mask);
        const float64x2_t mag = vminq_f64(vabsq_f64(v), vclip);
        const float64x2_t r = vrndnq_f64(vdivq_f64(mag, vstep));  // ties to even
        const float64x2_t q = vmulq_f64(vstep, r);
        vst1q_f64(out + i, vreinterpretq_f64_u64(
                               vorrq_u64(vreinterpretq_u64_f64(q), sign)));
    }
    for (; i < n; ++i) {
        const double m = std::fmin(std::fabs(x[i]), clip_max);
        const double r = std::nearbyint(m / step);
        out[i] = std::copysign(step * r, x[i]);
    }
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t n, std::size_t k) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const float64x2_t vav = vdupq_n_f64(av);
            const double* brow = b + l * n;
            std::size_t j = 0;
            for (; j + 2 <= n; j += 2) {
                const float64x2_t prod = vmulq_f64(vav, vld1q_f64(brow + j));
                vst1q_f64(crow + j, vaddq_f64(vld1q_f64(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] = crow[j] + av * brow[j];
        }
    }
}

}  // namespace geta::kernels::neon

#endif  // aarch64

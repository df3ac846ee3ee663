// AVX2 kernel variants. Per-element operation sequences match the scalar
// reference exactly (mul followed by add, never fused; rounding to nearest
// even), so outputs are bit-identical to the scalar backend.

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "geta/kernels.hpp"

namespace geta::kernels::avx2 {

namespace {
const __m256d kSignMask = _mm256_set1_pd(-0.0);
}

void add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double alpha, double* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), va));
    }
    for (; i < n; ++i) out[i] = a[i] * alpha;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void relu(const double* a, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(a + i);
        const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(v, mask));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward(const double* a, const double* g, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask =
            _mm256_cmp_pd(_mm256_loadu_pd(a + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(_mm256_loadu_pd(g + i), mask));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? g[i] : 0.0;
}

void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n) {
    const __m256d vstep = _mm256_set1_pd(step);
    const __m256d vclip = _mm256_set1_pd(clip_max);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        const __m256d sign = _mm256_and_pd(v, kSignMask);
        const __m256d mag = _mm256_min_pd(_mm256_andnot_pd(kSignMask, v), vclip);
        const __m256d r = _mm256_round_pd(
            _mm256_div_pd(mag, vstep),
            _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
        _mm256_storeu_pd(out + i, _mm256_or_pd(_mm256_mul_pd(vstep, r), sign));
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
            const __m256d vav = _mm256_set1_pd(av);
            const double* brow = b + l * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d prod = _mm256_mul_pd(vav, _mm256_loadu_pd(brow + j));
                _mm256_storeu_pd(crow + j,
                                 _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] = crow[j] + av * brow[j];
        }
    }
}

}  // namespace geta::kernels::avx2

#endif  // x86

#pragma once

#include <cstddef>

// Data-parallel inner loops used by the tensor engine. Each kernel has a
// scalar reference implementation and, where the target supports it, a SIMD
// variant selected at runtime. Every SIMD variant is bit-identical to the
// scalar reference: same per-element operation sequence, no fused
// multiply-add, ties-to-even rounding. The equivalence tests enforce this.

namespace geta::kernels {

enum class Backend { Scalar, Avx2, Neon };

const char* to_string(Backend b);
bool backend_available(Backend b);

/// Backend currently used by the dispatched entry points. Resolved once from
/// CPU detection, overridable via the GETA_KERNELS environment variable
/// (scalar|avx2|neon) or set_backend().
Backend active_backend();
void set_backend(Backend b);

// Dispatched entry points. `out` must not alias the inputs except where the
// operation is an in-place update (axpy).
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double alpha, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
void relu(const double* a, double* out, std::size_t n);
void relu_backward(const double* a, const double* g, double* out, std::size_t n);

/// Symmetric uniform fake quantization with identity shaping (exponent 1):
/// out = copysign(step * round_to_even(min(|x|, clip_max) / step), x).
void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n);

/// c[m x n] = a[m x k] * b[k x n], row-major, c overwritten. Accumulation
/// order over k is fixed and identical across backends.
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t n, std::size_t k);

namespace scalar {
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double alpha, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void relu(const double* a, double* out, std::size_t n);
void relu_backward(const double* a, const double* g, double* out, std::size_t n);
void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t n, std::size_t k);
}  // namespace scalar

#if defined(__x86_64__) || defined(__i386__)
namespace avx2 {
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double alpha, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void relu(const double* a, double* out, std::size_t n);
void relu_backward(const double* a, const double* g, double* out, std::size_t n);
void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t n, std::size_t k);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double alpha, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void relu(const double* a, double* out, std::size_t n);
void relu_backward(const double* a, const double* g, double* out, std::size_t n);
void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t n, std::size_t k);
}  // namespace neon
#endif

}  // namespace geta::kernels

#include "geta/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>

#include "geta/error.hpp"

namespace geta::kernels {

namespace scalar {

void add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double alpha, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void relu(const double* a, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward(const double* a, const double* g, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? g[i] : 0.0;
}

void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double m = std::fmin(std::fabs(x[i]), clip_max);
        const double r = std::nearbyint(m / step);  // ties to even
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
            const double* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

}  // namespace scalar

namespace {

struct KernelTable {
    decltype(&scalar::add) add;
    decltype(&scalar::mul) mul;
    decltype(&scalar::scale) scale;
    decltype(&scalar::axpy) axpy;
    decltype(&scalar::relu) relu;
    decltype(&scalar::relu_backward) relu_backward;
    decltype(&scalar::fake_quant_unit_exp) fake_quant_unit_exp;
    decltype(&scalar::matmul) matmul;
};

constexpr KernelTable kScalarTable = {
    scalar::add,        scalar::mul,  scalar::scale,
    scalar::axpy,       scalar::relu, scalar::relu_backward,
    scalar::fake_quant_unit_exp,      scalar::matmul,
};

#if defined(__x86_64__) || defined(__i386__)
constexpr KernelTable kAvx2Table = {
    avx2::add,        avx2::mul,  avx2::scale,
    avx2::axpy,       avx2::relu, avx2::relu_backward,
    avx2::fake_quant_unit_exp,    avx2::matmul,
};
#endif

#if defined(__aarch64__)
constexpr KernelTable kNeonTable = {
    neon::add,        neon::mul,  neon::scale,
    neon::axpy,       neon::relu, neon::relu_backward,
    neon::fake_quant_unit_exp,    neon::matmul,
};
#endif

struct Dispatch {
    Backend backend;
    const KernelTable* table;
};

const KernelTable* table_for(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return &kScalarTable;
        case Backend::Avx2:
#if defined(__x86_64__) || defined(__i386__)
            return &kAvx2Table;
#else
            return nullptr;
#endif
        case Backend::Neon:
#if defined(__aarch64__)
            return &kNeonTable;
#else
            return nullptr;
#endif
    }
    return nullptr;
}

Backend detect_backend() {
    if (const char* env = std::getenv("GETA_KERNELS")) {
        const std::string v(env);
        if (v == "scalar") return Backend::Scalar;
        if (v == "avx2" && backend_available(Backend::Avx2)) return Backend::Avx2;
        if (v == "neon" && backend_available(Backend::Neon)) return Backend::Neon;
    }
    if (backend_available(Backend::Avx2)) return Backend::Avx2;
    if (backend_available(Backend::Neon)) return Backend::Neon;
    return Backend::Scalar;
}

Dispatch& dispatch() {
    static Dispatch d = [] {
        const Backend b = detect_backend();
        return Dispatch{b, table_for(b)};
    }();
    return d;
}

}  // namespace

const char* to_string(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
    }
    return "unknown";
}

bool backend_available(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return true;
        case Backend::Avx2:
#if defined(__x86_64__) || defined(__i386__)
            return __builtin_cpu_supports("avx2") != 0;
#else
            return false;
#endif
        case Backend::Neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

Backend active_backend() { return dispatch().backend; }

void set_backend(Backend b) {
    if (!backend_available(b)) {
        throw Error(ErrorKind::Config,
                    std::string("kernel backend not available on this CPU: ") +
                        to_string(b));
    }
    dispatch() = Dispatch{b, table_for(b)};
}

void add(const double* a, const double* b, double* out, std::size_t n) {
    dispatch().table->add(a, b, out, n);
}
void mul(const double* a, const double* b, double* out, std::size_t n) {
    dispatch().table->mul(a, b, out, n);
}
void scale(const double* a, double alpha, double* out, std::size_t n) {
    dispatch().table->scale(a, alpha, out, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    dispatch().table->axpy(alpha, x, y, n);
}
void relu(const double* a, double* out, std::size_t n) {
    dispatch().table->relu(a, out, n);
}
void relu_backward(const double* a, const double* g, double* out, std::size_t n) {
    dispatch().table->relu_backward(a, g, out, n);
}
void fake_quant_unit_exp(const double* x, double step, double clip_max,
                         double* out, std::size_t n) {
    dispatch().table->fake_quant_unit_exp(x, step, clip_max, out, n);
}
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t n, std::size_t k) {
    dispatch().table->matmul(a, b, c, m, n, k);
}

}  // namespace geta::kernels

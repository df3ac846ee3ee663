#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "geta/kernels.hpp"
#include "test_util.hpp"

namespace gk = geta::kernels;

namespace {

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Sizes straddling the vector width to exercise remainder tails.
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 15, 16, 33, 100, 257};

}  // namespace

TEST_CASE("scalar matmul matches hand-computed products") {
    // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
    const std::vector<double> a = {1, 2, 3, 4};
    const std::vector<double> b = {5, 6, 7, 8};
    std::vector<double> c(4);
    gk::scalar::matmul(a.data(), b.data(), c.data(), 2, 2, 2);
    CHECK(c == std::vector<double>{19, 22, 43, 50});

    // Identity leaves the matrix unchanged.
    const std::vector<double> eye = {1, 0, 0, 1};
    std::vector<double> d(4);
    gk::scalar::matmul(a.data(), eye.data(), d.data(), 2, 2, 2);
    CHECK(d == a);
}

TEST_CASE("scalar matmul agrees with independent loop order") {
    testutil::Rng rng(11);
    const std::size_t m = 7, n = 9, k = 13;
    const auto a = testutil::normal_vector(rng, m * k);
    const auto b = testutil::normal_vector(rng, k * n);
    std::vector<double> c(m * n);
    gk::scalar::matmul(a.data(), b.data(), c.data(), m, n, k);

    // Dot-product formulation; different accumulation pattern, so compare
    // with a tolerance.
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
            CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("scalar fake_quant_unit_exp rounds ties to even") {
    // Binary-exact half-grid points: 0.125/0.25 = 0.5, 0.375/0.25 = 1.5,
    // 0.625/0.25 = 2.5. Ties go to the even integer.
    const std::vector<double> x = {0.125, 0.375, 0.625, -0.125, -0.375};
    std::vector<double> out(x.size());
    gk::scalar::fake_quant_unit_exp(x.data(), 0.25, 1.0, out.data(), x.size());
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.5);
    CHECK(out[2] == 0.5);
    CHECK(out[3] == -0.0);
    CHECK(out[4] == -0.5);
}

TEST_CASE("simd variants are bit-identical to scalar") {
    const bool have_simd = gk::backend_available(gk::Backend::Avx2) ||
                           gk::backend_available(gk::Backend::Neon);
    if (!have_simd) {
        MESSAGE("no SIMD backend on this CPU; skipping equivalence checks");
        return;
    }
    const gk::Backend simd = gk::backend_available(gk::Backend::Avx2)
                                 ? gk::Backend::Avx2
                                 : gk::Backend::Neon;

    testutil::Rng rng(42);
    for (std::size_t n : kSizes) {
        auto a = testutil::normal_vector(rng, n, 3.0);
        auto b = testutil::normal_vector(rng, n, 2.0);
        // Include negative zeros and exact grid points.
        if (n > 2) {
            a[0] = -0.0;
            a[1] = 0.25;
        }
        std::vector<double> got(n), want(n);

        auto run = [&](auto scalar_fn, auto simd_fn, const char* name) {
            scalar_fn(want);
            simd_fn(got);
            INFO("kernel ", name, " n=", n);
            CHECK(bit_equal(got, want));
        };

        run([&](auto& o) { gk::scalar::add(a.data(), b.data(), o.data(), n); },
            [&](auto& o) {
#if defined(__x86_64__) || defined(__i386__)
                gk::avx2::add(a.data(), b.data(), o.data(), n);
#elif defined(__aarch64__)
                gk::neon::add(a.data(), b.data(), o.data(), n);
#endif
            },
            "add");
        run([&](auto& o) { gk::scalar::mul(a.data(), b.data(), o.data(), n); },
            [&](auto& o) {
#if defined(__x86_64__) || defined(__i386__)
                gk::avx2::mul(a.data(), b.data(), o.data(), n);
#elif defined(__aarch64__)
                gk::neon::mul(a.data(), b.data(), o.data(), n);
#endif
            },
            "mul");
        run([&](auto& o) { gk::scalar::scale(a.data(), 1.7, o.data(), n); },
            [&](auto& o) {
#if defined(__x86_64__) || defined(__i386__)
                gk::avx2::scale(a.data(), 1.7, o.data(), n);
#elif defined(__aarch64__)
                gk::neon::scale(a.data(), 1.7, o.data(), n);
#endif
            },
            "scale");
        run([&](auto& o) { gk::scalar::relu(a.data(), o.data(), n); },
            [&](auto& o) {
#if defined(__x86_64__) || defined(__i386__)
                gk::avx2::relu(a.data(), o.data(), n);
#elif defined(__aarch64__)
                gk::neon::relu(a.data(), o.data(), n);
#endif
            },
            "relu");
        run([&](auto& o) {
                gk::scalar::relu_backward(a.data(), b.data(), o.data(), n);
            },
            [&](auto& o) {
#if defined(__x86_64__) || defined(__i386__)
                gk::avx2::relu_backward(a.data(), b.data(), o.data(), n);
#elif defined(__aarch64__)
                gk::neon::relu_backward(a.data(), b.data(), o.data(), n);
#endif
            },
            "relu_backward");
        run([&](auto& o) {
                gk::scalar::fake_quant_unit_exp(a.data(), 0.1, 1.25, o.data(), n);
            },
            [&](auto& o) {
#if defined(__x86_64__) || defined(__i386__)
                gk::avx2::fake_quant_unit_exp(a.data(), 0.1, 1.25, o.data(), n);
#elif defined(__aarch64__)
                gk::neon::fake_quant_unit_exp(a.data(), 0.1, 1.25, o.data(), n);
#endif
            },
            "fake_quant_unit_exp");

        // axpy mutates y; run on copies.
        {
            std::vector<double> y0 = b, y1 = b;
            gk::scalar::axpy(-0.3, a.data(), y0.data(), n);
#if defined(__x86_64__) || defined(__i386__)
            gk::avx2::axpy(-0.3, a.data(), y1.data(), n);
#elif defined(__aarch64__)
            gk::neon::axpy(-0.3, a.data(), y1.data(), n);
#endif
            INFO("kernel axpy n=", n);
            CHECK(bit_equal(y0, y1));
        }
    }

    // matmul across shapes with remainder columns.
    for (auto [m, n, k] : {std::array<std::size_t, 3>{1, 1, 1},
                           std::array<std::size_t, 3>{3, 5, 2},
                           std::array<std::size_t, 3>{4, 4, 4},
                           std::array<std::size_t, 3>{8, 9, 7},
                           std::array<std::size_t, 3>{16, 33, 12}}) {
        const auto a = testutil::normal_vector(rng, m * k);
        const auto b = testutil::normal_vector(rng, k * n);
        std::vector<double> c0(m * n), c1(m * n);
        gk::scalar::matmul(a.data(), b.data(), c0.data(), m, n, k);
#if defined(__x86_64__) || defined(__i386__)
        gk::avx2::matmul(a.data(), b.data(), c1.data(), m, n, k);
#elif defined(__aarch64__)
        gk::neon::matmul(a.data(), b.data(), c1.data(), m, n, k);
#endif
        INFO("matmul ", m, "x", k, " * ", k, "x", n);
        CHECK(bit_equal(c0, c1));
    }
    (void)simd;
}

TEST_CASE("backend dispatch is switchable and consistent") {
    const gk::Backend initial = gk::active_backend();
    CHECK(gk::backend_available(initial));

    testutil::Rng rng(7);
    const std::size_t n = 37;
    const auto a = testutil::normal_vector(rng, n);
    const auto b = testutil::normal_vector(rng, n);
    std::vector<double> via_dispatch(n), via_scalar(n);

    gk::set_backend(gk::Backend::Scalar);
    CHECK(gk::active_backend() == gk::Backend::Scalar);
    gk::add(a.data(), b.data(), via_scalar.data(), n);

    gk::set_backend(initial);
    gk::add(a.data(), b.data(), via_dispatch.data(), n);
    CHECK(bit_equal(via_dispatch, via_scalar));

    CHECK_THROWS(gk::set_backend(gk::backend_available(gk::Backend::Avx2)
                                     ? gk::Backend::Neon
                                     : gk::Backend::Avx2));
    CHECK(gk::active_backend() == initial);
}

#pragma once

#include <cstdint>
#include <random>
#include <vector>

// Deterministic random helpers shared by the test binaries. Distributions are
// built from raw mt19937_64 output so sequences are identical across
// platforms and standard libraries.

namespace testutil {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        // Box-Muller; consumes two draws.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t next_u64() { return gen_(); }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  private:
    std::mt19937_64 gen_;
};

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo,
                                         double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline std::vector<double> normal_vector(Rng& rng, std::size_t n,
                                         double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace testutil

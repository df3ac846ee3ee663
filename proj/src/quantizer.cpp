#include "geta/quantizer.hpp"

#include <cmath>

#include "geta/error.hpp"
#include "geta/kernels.hpp"

namespace geta::quant {

void QuantParams::check() const {
    if (!valid()) {
        throw Error(ErrorKind::Config,
                    "quantizer parameters must be positive (layer '" +
                        layer_id + "')");
    }
}

namespace {

// |x|^t with 0^t defined as 0 for any t > 0.
double pow_mag(double mag, double t) {
    if (mag == 0.0) return 0.0;
    if (t == 1.0) return mag;
    return std::pow(mag, t);
}

}  // namespace

double clip_pow(double x, const QuantParams& p) {
    const double mag = std::fabs(x);
    return mag <= p.clip_max ? pow_mag(mag, p.exponent)
                             : pow_mag(p.clip_max, p.exponent);
}

double nonlinear_map_value(double x, const QuantParams& p) {
    return sign_of(x) * clip_pow(x, p);
}

double quantize_value(double x, const QuantParams& p) {
    const double shaped = nonlinear_map_value(x, p);
    return p.step * std::nearbyint(shaped / p.step);
}

double grad_step_value(double x, const QuantParams& p) {
    const double v = clip_pow(x, p);
    const double z = v / p.step;
    return sign_of(x) * (std::nearbyint(z) - z);
}

double grad_exponent_value(double x, const QuantParams& p) {
    const double mag = std::fabs(x);
    if (mag == 0.0) return 0.0;  // limit convention
    if (mag <= p.clip_max) {
        return sign_of(x) * pow_mag(mag, p.exponent) * std::log(mag);
    }
    return sign_of(x) * pow_mag(p.clip_max, p.exponent) * std::log(p.clip_max);
}

double grad_clip_max_value(double x, const QuantParams& p) {
    // |x| == clip_max takes the clipped branch: the mapping is continuous
    // there but its clip_max-derivative is not, and the saturated side is the
    // one that moves with the clip.
    if (std::fabs(x) < p.clip_max) return 0.0;
    if (x == 0.0) return 0.0;
    return sign_of(x) * p.exponent * std::pow(p.clip_max, p.exponent - 1.0);
}

double surrogate_dx_value(double x, const QuantParams& p) {
    const double mag = std::fabs(x);
    if (mag > p.clip_max) return 0.0;
    if (p.exponent == 1.0) return 1.0;
    if (mag == 0.0) return 0.0;  // clip the t<1 singularity at the origin
    return p.exponent * std::pow(mag, p.exponent - 1.0);
}

namespace {

template <typename F>
Tensor map_tensor(const Tensor& x, F&& f) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = f(x.data[i]);
    return out;
}

}  // namespace

Tensor nonlinear_map(const Tensor& x, const QuantParams& p) {
    p.check();
    return map_tensor(x, [&](double v) { return nonlinear_map_value(v, p); });
}

Tensor quantize(const Tensor& x, const QuantParams& p) {
    p.check();
    if (p.exponent == 1.0) {
        Tensor out(x.shape);
        kernels::fake_quant_unit_exp(x.data.data(), p.step, p.clip_max,
                                     out.data.data(), x.numel());
        return out;
    }
    return map_tensor(x, [&](double v) { return quantize_value(v, p); });
}

double bit_width(double step, double clip_max, double exponent) {
    return std::log2(std::pow(clip_max, exponent) / step + 1.0) + 1.0;
}

double bit_width(const QuantParams& p) {
    p.check();
    return bit_width(p.step, p.clip_max, p.exponent);
}

Tensor grad_step(const Tensor& x, const QuantParams& p) {
    p.check();
    return map_tensor(x, [&](double v) { return grad_step_value(v, p); });
}

Tensor grad_exponent(const Tensor& x, const QuantParams& p) {
    p.check();
    return map_tensor(x, [&](double v) { return grad_exponent_value(v, p); });
}

Tensor grad_clip_max(const Tensor& x, const QuantParams& p) {
    p.check();
    return map_tensor(x, [&](double v) { return grad_clip_max_value(v, p); });
}

QuantDecomposition decompose(const Tensor& x, const QuantParams& p) {
    p.check();
    QuantDecomposition out;
    out.clipped = map_tensor(x, [&](double v) { return clip_pow(v, p); });
    out.residual = map_tensor(x, [&](double v) {
        const double z = clip_pow(v, p) / p.step;
        return std::nearbyint(z) - z;
    });
    out.signs = map_tensor(x, [](double v) { return sign_of(v); });
    return out;
}

std::pair<double, double> step_bounds(double clip_max, double exponent,
                                      int bits_lower, int bits_upper) {
    if (bits_lower < 2) {
        throw Error(ErrorKind::Config,
                    "bit range lower bound must be >= 2, got " +
                        std::to_string(bits_lower));
    }
    if (bits_upper < bits_lower) {
        throw Error(ErrorKind::Config, "bit range upper bound below lower bound");
    }
    if (!(clip_max > 0.0) || !(exponent > 0.0)) {
        throw Error(ErrorKind::Config, "step_bounds requires positive clip_max and exponent");
    }
    const double top = std::pow(clip_max, exponent);
    const double step_min = top / (std::pow(2.0, bits_upper - 1) - 1.0);
    const double step_max = top / (std::pow(2.0, bits_lower - 1) - 1.0);
    return {step_min, step_max};
}

QuantParams project_step(const QuantParams& p, int bits_lower, int bits_upper) {
    p.check();
    const auto [lo, hi] = step_bounds(p.clip_max, p.exponent, bits_lower, bits_upper);
    QuantParams out = p;
    if (out.step < lo) out.step = lo;
    if (out.step > hi) out.step = hi;
    return out;
}

}  // namespace geta::quant

#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "geta/tensor.hpp"

// Learnable symmetric uniform quantizer. A tensor is first shaped by a
// clipped power mapping controlled by (clip_max, exponent), then snapped to
// a uniform grid with spacing `step`. The triple determines the layer's bit
// width, which is what the optimizer steers.

namespace geta::quant {

/// Per-layer learnable quantizer parameters.
///   step     - grid spacing d (> 0)
///   clip_max - clipping maximum q_m (> 0)
///   exponent - shaping exponent t (> 0)
struct QuantParams {
    double step = 1.0;
    double clip_max = 1.0;
    double exponent = 1.0;
    std::string layer_id;

    bool valid() const {
        return step > 0.0 && clip_max > 0.0 && exponent > 0.0;
    }
    void check() const;
};

/// Decomposition of a quantized tensor into clipped magnitude, grid residual
/// and signs: quantize(x) = signs*clipped + step*signs*residual.
struct QuantDecomposition {
    Tensor clipped;   // clip(|x|): |x|^t inside the clip, clip_max^t outside
    Tensor residual;  // round(v/step) - v/step, in [-0.5, 0.5]
    Tensor signs;     // sgn(x) in {-1, 0, 1}
};

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Scalar building blocks (elementwise semantics of the tensor ops below).
double clip_pow(double x, const QuantParams& p);       // clip(|x|)^... magnitude
double nonlinear_map_value(double x, const QuantParams& p);
double quantize_value(double x, const QuantParams& p);
double grad_step_value(double x, const QuantParams& p);
double grad_exponent_value(double x, const QuantParams& p);
double grad_clip_max_value(double x, const QuantParams& p);
/// True straight-through derivative of the continuous surrogate w.r.t. x.
double surrogate_dx_value(double x, const QuantParams& p);

/// Shaped pre-quantization value: sgn(x)*min(|x|, clip_max)^exponent.
Tensor nonlinear_map(const Tensor& x, const QuantParams& p);

/// Fake-quantized value: step * round_to_even(nonlinear_map(x)/step).
Tensor quantize(const Tensor& x, const QuantParams& p);

/// Bit width implied by the parameters:
///   b = log2(clip_max^exponent / step + 1) + 1.
/// Strictly decreasing in step, strictly increasing in clip_max^exponent.
double bit_width(const QuantParams& p);
double bit_width(double step, double clip_max, double exponent);

// Straight-through gradients of the quantized value w.r.t. each parameter.
Tensor grad_step(const Tensor& x, const QuantParams& p);       // entries in [-0.5, 0.5]
Tensor grad_exponent(const Tensor& x, const QuantParams& p);
Tensor grad_clip_max(const Tensor& x, const QuantParams& p);

QuantDecomposition decompose(const Tensor& x, const QuantParams& p);

/// Step-size interval [step_min, step_max] such that any step within it
/// yields a bit width inside [bits_lower, bits_upper]. bits_lower must be
/// at least 2.
std::pair<double, double> step_bounds(double clip_max, double exponent,
                                      int bits_lower, int bits_upper);

/// Clamp p.step into the interval from step_bounds; clip_max and exponent
/// are left untouched.
QuantParams project_step(const QuantParams& p, int bits_lower, int bits_upper);

}  // namespace geta::quant

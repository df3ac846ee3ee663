#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "geta/quantizer.hpp"

// Rule layer of the joint pruning/quantization optimizer: learning-rate
// schedule, the forget-rate and step-size selection rules, the bit-width
// safeguard, saliency scoring and the period partition schedule. These are
// pure functions over flat views; the stage driver lives in optimizer.hpp.

namespace geta::qasso {

struct LrSchedule {
    enum class Kind { Constant, Step };
    Kind kind = Kind::Constant;
    double base = 0.1;
    double decay = 0.1;     // multiplier applied every `step_every` steps
    int step_every = 1000;

    double at(int step) const;
};

struct QassoConfig {
    LrSchedule lr;
    double quant_lr = 1e-4;

    int warmup_steps = 0;        // K_w
    int projection_periods = 1;  // B
    int projection_steps = 0;    // K_b per period
    int bit_reduction = 1;       // b_r, upper-bound shrink per period
    int pruning_periods = 1;     // P
    int pruning_steps = 0;       // K_p per period
    int cooldown_steps = 0;

    int target_groups = 0;  // K, exact number of groups driven to zero

    int bits_lower = 4;
    int bits_upper = 16;

    double eta = 0.9;
    double xi = 0.999;
    double epsilon = 1e-8;
    double beta = 0.5;
    // Strictness factor applied to the forget rate on its descent-bound
    // branch so the strict inequality of the descent property holds.
    double gamma_slack = 0.999;

    bool momentum = false;
    double momentum_coef = 0.9;

    void validate(std::size_t removable_groups) const;
    /// Upper bit bound in effect after the projection stage has finished.
    int joint_bits_upper() const {
        return bits_upper - projection_periods * bit_reduction;
    }
    int total_steps() const {
        return warmup_steps + projection_periods * projection_steps +
               pruning_periods * pruning_steps + cooldown_steps;
    }
};

/// Important/redundant split of the group ids. Non-removable groups always
/// stay important; once a group turns redundant it stays redundant.
struct GroupPartition {
    std::set<int> important;
    std::set<int> redundant;
};

/// score(g) = ||x_g||_2 / sqrt(|g|), over the group's trainable entries.
double group_saliency(std::span<const double> values);

/// Selects the ceil(K*(period+1)/P) lowest-scoring removable groups as
/// redundant (ties to the smaller id), keeping everything previously
/// redundant.
GroupPartition partition_groups(const std::map<int, double>& scores,
                                const std::set<int>& non_removable,
                                const GroupPartition& previous, int period,
                                const QassoConfig& cfg);

struct ForgetRateResult {
    double gamma = 0.0;
    double cos_theta = 0.0;
    double clip_mean = 0.0;
    int branch = 1;  // 1: clip below eps, 2: cos >= 0, 3: descent bound
};

/// Forget-rate selection over the concatenated redundant set. `signed_clip`
/// holds sgn(x)*clip(|x|) per entry; the clip magnitudes are its absolute
/// values.
ForgetRateResult forget_rate(std::span<const double> grad,
                             std::span<const double> signed_clip, double alpha,
                             int k, const QassoConfig& cfg);

struct StepSizeResult {
    double step = 0.0;
    bool changed = false;
    double cos_theta = 0.0;
    int branch = 0;  // 0: unchanged, 1: cos >= 0 (coarsest grid), 2: bound
};

/// Step-size selection for one layer from its redundant entries. residuals
/// are evaluated at `current_step` (sgn(x)*R(x)); gamma comes from
/// forget_rate.
StepSizeResult step_size_rule(std::span<const double> grad,
                              std::span<const double> signed_residual,
                              double gamma, double alpha, double current_step,
                              double clip_max, double exponent,
                              const QassoConfig& cfg);

struct SafeguardResult {
    double gamma = 0.0;
    double step = 0.0;
    int iterations = 0;
};

/// Multiplicative adjustment keeping the bit width inside
/// [bits_lower, bits_upper]: too many bits scales (gamma, step) by
/// (beta, 1/beta); too few bits scales step by beta. Terminates or throws a
/// numeric-anomaly error after 10^4 iterations.
SafeguardResult safeguard_adjust(double gamma, double step, double clip_max,
                                 double exponent, int bits_lower,
                                 int bits_upper, double beta);

struct DescentReport {
    double gamma = 0.0;
    int gamma_branch = 0;
    double step = 0.0;
    int step_branch = 0;
    int safeguard_iterations = 0;
    double grad_norm = 0.0;
    double clip_dot = 0.0;   // grad . s_clip
    double dir_dot = 0.0;    // grad . s, residual term scaled by the chosen step
    double exact_dot = 0.0;  // grad . s with the quantized value recomputed
    bool stationary = false;
};

/// Applies the full rule pipeline (forget rate, step size, safeguard) to one
/// redundant group treated as a single quantized layer and reports the
/// directional derivatives the descent property is stated over.
DescentReport descent_check_instance(std::span<const double> grad,
                                     std::span<const double> x,
                                     const quant::QuantParams& params,
                                     double alpha, int k,
                                     const QassoConfig& cfg);

}  // namespace geta::qasso

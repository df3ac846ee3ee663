#include "geta/qasso.hpp"

#include <algorithm>
#include <cmath>

#include "geta/error.hpp"

namespace geta::qasso {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr int kSafeguardCap = 10000;

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double LrSchedule::at(int step) const {
    if (kind == Kind::Constant) return base;
    const int drops = step_every > 0 ? step / step_every : 0;
    return base * std::pow(decay, drops);
}

void QassoConfig::validate(std::size_t removable_groups) const {
    if (bits_lower < 2) {
        throw Error(ErrorKind::Config, "bits_lower must be >= 2");
    }
    if (bits_upper < bits_lower + 1) {
        throw Error(ErrorKind::Config,
                    "bit range requires bits_upper >= bits_lower + 1");
    }
    if (projection_periods < 1 ||
        projection_periods > bits_upper - bits_lower) {
        throw Error(ErrorKind::Config,
                    "projection_periods must lie in [1, bits_upper - bits_lower]");
    }
    if (bit_reduction < 1 ||
        projection_periods * bit_reduction > bits_upper - bits_lower) {
        throw Error(ErrorKind::Config,
                    "bit_reduction must lie in [1, (bits_upper - bits_lower) / "
                    "projection_periods]");
    }
    if (pruning_periods < 1) {
        throw Error(ErrorKind::Config, "pruning_periods must be >= 1");
    }
    if (warmup_steps < 0 || projection_steps < 0 || pruning_steps < 0 ||
        cooldown_steps < 0) {
        throw Error(ErrorKind::Config, "step counts must be nonnegative");
    }
    if (target_groups < 0 ||
        static_cast<std::size_t>(target_groups) > removable_groups) {
        throw Error(ErrorKind::Config,
                    "target_groups exceeds the removable group count (" +
                        std::to_string(removable_groups) + ")");
    }
    if (target_groups > 0 && pruning_steps < 1) {
        throw Error(ErrorKind::Config,
                    "pruning requires at least one pruning step per period");
    }
    if (!(eta > 0.0 && eta < 1.0) || !(xi > 0.0 && xi < 1.0) ||
        !(beta > 0.0 && beta < 1.0)) {
        throw Error(ErrorKind::Config, "eta, xi and beta must lie in (0,1)");
    }
    if (!(epsilon > 0.0)) {
        throw Error(ErrorKind::Config, "epsilon must be positive");
    }
    if (!(gamma_slack > 0.0 && gamma_slack <= 1.0)) {
        throw Error(ErrorKind::Config, "gamma_slack must lie in (0,1]");
    }
    if (!(lr.base > 0.0) || !(quant_lr > 0.0)) {
        throw Error(ErrorKind::Config, "learning rates must be positive");
    }
}

double group_saliency(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return l2(values) / std::sqrt(static_cast<double>(values.size()));
}

GroupPartition partition_groups(const std::map<int, double>& scores,
                                const std::set<int>& non_removable,
                                const GroupPartition& previous, int period,
                                const QassoConfig& cfg) {
    if (period < 0 || period >= cfg.pruning_periods) {
        throw Error(ErrorKind::Config, "pruning period out of range");
    }
    const long long target =
        (static_cast<long long>(cfg.target_groups) * (period + 1) +
         cfg.pruning_periods - 1) /
        cfg.pruning_periods;  // ceil(K*(p+1)/P)

    GroupPartition out;
    out.redundant = previous.redundant;
    std::vector<std::pair<double, int>> candidates;
    for (const auto& [id, score] : scores) {
        if (!out.redundant.count(id)) candidates.emplace_back(score, id);
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& [score, id] : candidates) {
        (void)score;
        if (static_cast<long long>(out.redundant.size()) >= target) break;
        out.redundant.insert(id);
    }
    if (static_cast<long long>(out.redundant.size()) <
            std::min<long long>(target, static_cast<long long>(scores.size()))) {
        throw Error(ErrorKind::Config, "not enough removable groups to partition");
    }
    for (const auto& [id, score] : scores) {
        (void)score;
        if (!out.redundant.count(id)) out.important.insert(id);
    }
    out.important.insert(non_removable.begin(), non_removable.end());
    return out;
}

ForgetRateResult forget_rate(std::span<const double> grad,
                             std::span<const double> signed_clip, double alpha,
                             int k, const QassoConfig& cfg) {
    if (grad.size() != signed_clip.size()) {
        throw Error(ErrorKind::Shape, "forget_rate: mismatched spans");
    }
    if (k < 0 || k >= cfg.pruning_steps) {
        throw Error(ErrorKind::Config, "forget_rate: step index out of range");
    }
    ForgetRateResult r;
    double clip_sum = 0.0;
    for (double c : signed_clip) clip_sum += std::fabs(c);
    r.clip_mean = signed_clip.empty()
                      ? 0.0
                      : clip_sum / static_cast<double>(signed_clip.size());

    const double gnorm = l2(grad);
    const double cnorm = l2(signed_clip);
    if (r.clip_mean <= cfg.epsilon || gnorm <= kNormFloor ||
        cnorm <= kNormFloor) {
        r.branch = 1;
        r.gamma = 0.0;
        return r;
    }
    r.cos_theta = dot(grad, signed_clip) / (gnorm * cnorm);
    if (r.cos_theta >= 0.0) {
        r.branch = 2;
        r.gamma = 1.0 / static_cast<double>(cfg.pruning_steps - k);
    } else {
        r.branch = 3;
        r.gamma = -cfg.gamma_slack * (1.0 - cfg.eta) * alpha * gnorm /
                  (r.cos_theta * cnorm);
    }
    return r;
}

StepSizeResult step_size_rule(std::span<const double> grad,
                              std::span<const double> signed_residual,
                              double gamma, double alpha, double current_step,
                              double clip_max, double exponent,
                              const QassoConfig& cfg) {
    if (grad.size() != signed_residual.size()) {
        throw Error(ErrorKind::Shape, "step_size_rule: mismatched spans");
    }
    StepSizeResult r;
    r.step = current_step;
    if (gamma <= 0.0 || grad.empty()) {
        return r;  // rule inapplicable
    }
    const double gnorm = l2(grad);
    const double rnorm = l2(signed_residual);
    if (rnorm <= kNormFloor) {
        return r;  // residual direction degenerate; keep the current grid
    }
    r.cos_theta = gnorm <= kNormFloor
                      ? 0.0
                      : dot(grad, signed_residual) / (gnorm * rnorm);
    if (r.cos_theta >= 0.0) {
        r.branch = 1;
        r.step = std::pow(clip_max, exponent) /
                 (std::pow(2.0, cfg.bits_lower - 1) - 1.0);
    } else {
        r.branch = 2;
        r.step = -cfg.xi * cfg.eta * alpha * gnorm /
                 (gamma * r.cos_theta * rnorm);
    }
    r.changed = true;
    return r;
}

SafeguardResult safeguard_adjust(double gamma, double step, double clip_max,
                                 double exponent, int bits_lower,
                                 int bits_upper, double beta) {
    if (!(step > 0.0) || !std::isfinite(step)) {
        throw Error(ErrorKind::Numeric, "safeguard: step must be positive finite");
    }
    if (!(beta > 0.0 && beta < 1.0)) {
        throw Error(ErrorKind::Config, "safeguard: beta must lie in (0,1)");
    }
    SafeguardResult r{gamma, step, 0};
    while (true) {
        const double b = quant::bit_width(r.step, clip_max, exponent);
        if (b >= bits_lower && b <= bits_upper) break;
        if (++r.iterations > kSafeguardCap) {
            throw Error(ErrorKind::Numeric,
                        "safeguard did not converge within 10^4 iterations");
        }
        if (b > bits_upper) {
            r.gamma *= beta;   // weaker forgetting permits a coarser grid
            r.step /= beta;
        } else {
            r.step *= beta;
        }
    }
    return r;
}

DescentReport descent_check_instance(std::span<const double> grad,
                                     std::span<const double> x,
                                     const quant::QuantParams& params,
                                     double alpha, int k,
                                     const QassoConfig& cfg) {
    if (grad.size() != x.size()) {
        throw Error(ErrorKind::Shape, "descent_check: mismatched spans");
    }
    params.check();
    const std::size_t n = x.size();
    std::vector<double> signed_clip(n), signed_residual(n);
    for (std::size_t i = 0; i < n; ++i) {
        signed_clip[i] = quant::sign_of(x[i]) * quant::clip_pow(x[i], params);
        const double v = quant::clip_pow(x[i], params);
        const double z = v / params.step;
        signed_residual[i] =
            quant::sign_of(x[i]) * (std::nearbyint(z) - z);
    }

    DescentReport rep;
    rep.grad_norm = l2(grad);
    const auto fr = forget_rate(grad, signed_clip, alpha, k, cfg);
    rep.gamma = fr.gamma;
    rep.gamma_branch = fr.branch;
    if (fr.gamma == 0.0) {
        rep.stationary = rep.grad_norm <= kNormFloor;
        rep.step = params.step;
        const double gg = rep.grad_norm * rep.grad_norm;
        rep.clip_dot = -alpha * gg;
        rep.dir_dot = -alpha * gg;
        rep.exact_dot = -alpha * gg;
        return rep;
    }

    const auto sr = step_size_rule(grad, signed_residual, fr.gamma, alpha,
                                   params.step, params.clip_max,
                                   params.exponent, cfg);
    rep.step_branch = sr.branch;
    double gamma = fr.gamma;
    double step = sr.step;
    if (sr.changed) {
        const auto sg =
            safeguard_adjust(gamma, step, params.clip_max, params.exponent,
                             cfg.bits_lower, cfg.joint_bits_upper(), cfg.beta);
        gamma = sg.gamma;
        step = sg.step;
        rep.safeguard_iterations = sg.iterations;
    }
    rep.gamma = gamma;
    rep.step = step;

    const double gg = rep.grad_norm * rep.grad_norm;
    rep.clip_dot = -alpha * gg - gamma * dot(grad, signed_clip);
    rep.dir_dot = rep.clip_dot - gamma * step * dot(grad, signed_residual);
    double exact = -alpha * gg;
    quant::QuantParams chosen = params;
    chosen.step = step;
    for (std::size_t i = 0; i < n; ++i) {
        exact -= gamma * grad[i] * quant::quantize_value(x[i], chosen);
    }
    rep.exact_dot = exact;
    return rep;
}

}  // namespace geta::qasso

#pragma once

// Reference implementations of the head training losses on plain arrays.

#include <algorithm>
#include <cmath>
#include <vector>

#include "panfuse/core.hpp"

namespace panfuse::losses {

struct LossConfig {
    double t_k = 0.2;
    double epsilon = 1e-12;

    void validate() const {
        if (!(t_k > 0.0 && t_k <= 1.0)) throw ValidationError("loss t_K must lie in (0,1]");
        if (!(epsilon > 0.0 && epsilon < 0.5)) throw ValidationError("loss epsilon must be tiny and positive");
    }
};

namespace detail {

/// Pairwise (tree) summation; deterministic for a fixed input order.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

}  // namespace detail

/// -(1/K) * sum over pixels with p_true < t_K of log(p_true), with K the
/// number of such pixels. Returns 0 when no pixel is selected. Pixels whose
/// target is `ignore_id` are skipped.
inline double bootstrapped_ce(const FloatMap& probs, const ClassMap& targets, ClassId ignore_id,
                              const LossConfig& cfg) {
    cfg.validate();
    require_same_size(probs.shape(), targets.shape(), "bootstrapped_ce");
    if (targets.channels() != 1) throw ValidationError("bootstrapped_ce: targets must be single-channel");
    std::vector<double> terms;
    std::size_t valid = 0;
    for (std::size_t y = 0; y < targets.height(); ++y) {
        for (std::size_t x = 0; x < targets.width(); ++x) {
            const ClassId t = targets(y, x);
            if (t == ignore_id) continue;
            if (t >= probs.channels())
                throw ValidationError("bootstrapped_ce: target class " + std::to_string(t) + " out of range");
            ++valid;
            const double p = probs(y, x, t);
            if (p < cfg.t_k) terms.push_back(-std::log(std::max(p, cfg.epsilon)));
        }
    }
    if (valid == 0) throw ValidationError("bootstrapped_ce: no non-ignore pixels");
    if (terms.empty()) return 0.0;
    return detail::pairwise_sum(terms.data(), terms.size()) / static_cast<double>(terms.size());
}

/// Mean binary cross entropy; probabilities clamped to [eps, 1 - eps].
inline double binary_ce(const FloatMap& probs, const BinaryMap& targets, const LossConfig& cfg) {
    cfg.validate();
    require_same_size(probs.shape(), targets.shape(), "binary_ce");
    if (probs.channels() != 1 || targets.channels() != 1)
        throw ValidationError("binary_ce: maps must be single-channel");
    std::vector<double> terms(probs.pixels());
    for (std::size_t i = 0; i < probs.pixels(); ++i) {
        const double p = std::clamp(static_cast<double>(probs[i]), cfg.epsilon, 1.0 - cfg.epsilon);
        const std::uint8_t y = targets[i];
        if (y > 1) throw ValidationError("binary_ce: targets must be 0 or 1");
        terms[i] = -(y ? std::log(p) : std::log(1.0 - p));
    }
    return detail::pairwise_sum(terms.data(), terms.size()) / static_cast<double>(terms.size());
}

}  // namespace panfuse::losses

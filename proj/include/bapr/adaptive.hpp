#pragma once

// Surprise -> lambda_w -> beta_eff chain. The run-length posterior is
// collapsed into lambda_w (normalized expected run-length above its EMA
// baseline), which can only push the LCB coefficient further below beta_base.

#include "bapr/error.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>

namespace bapr {

struct SurpriseWeights {
    double w_r = 0.5;
    double w_q = 0.3;
    double w_kappa = 0.2;
    double clip_max = 10.0;

    void validate() const {
        if (!(w_r >= 0.0 && w_q >= 0.0 && w_kappa >= 0.0))
            throw DomainError("surprise weights must be >= 0");
        if (!(clip_max > 0.0) || !std::isfinite(clip_max)) throw DomainError("clip_max must be > 0");
    }
};

struct SurpriseInputs {
    double reward_z = 0.0;    // reward z-score
    double q_std_ratio = 0.0; // sigma_Q / running mean of sigma_Q
    double kappa_div = 0.0;   // |kappa - kappa_target|
};

/// Unclipped fusion w_r |z| + w_q ratio + w_kappa div.
inline double raw_surprise(const SurpriseInputs& in, const SurpriseWeights& w) {
    if (!std::isfinite(in.reward_z) || !std::isfinite(in.q_std_ratio) || !std::isfinite(in.kappa_div))
        throw DomainError("surprise inputs must be finite");
    return w.w_r * std::abs(in.reward_z) + w.w_q * in.q_std_ratio + w.w_kappa * in.kappa_div;
}

/// Fused surprise clipped to [0, clip_max].
inline double surprise(const SurpriseInputs& in, const SurpriseWeights& w) {
    return std::clamp(raw_surprise(in, w), 0.0, w.clip_max);
}

/// rate * prev + (1 - rate) * x. `rate` is the retention of the previous value.
inline double ema_update(double prev, double x, double rate) {
    if (!(rate > 0.0 && rate < 1.0)) throw DomainError("EMA rate must lie in (0, 1)");
    return rate * prev + (1.0 - rate) * x;
}

struct AdaptiveState {
    double ema_baseline = 0.0;
    double ema_rate = 0.95;
    double beta_base = -2.0;
    double c_penalty = 0.5;
    double surprise_ema = 0.0;
    double surprise_ema_rate = 0.3;
    bool smooth_surprise = true;
    // Both EMAs start at their first observation rather than at zero.
    bool baseline_initialized = false;
    bool surprise_initialized = false;

    void validate() const {
        if (!(ema_rate > 0.0 && ema_rate < 1.0)) throw DomainError("baseline EMA rate must lie in (0, 1)");
        if (!(surprise_ema_rate > 0.0 && surprise_ema_rate < 1.0))
            throw DomainError("surprise EMA rate must lie in (0, 1)");
        if (!(c_penalty >= 0.0) || !std::isfinite(c_penalty)) throw DomainError("c_penalty must be >= 0");
        if (!std::isfinite(beta_base)) throw DomainError("beta_base must be finite");
    }
};

/// Post-fusion surprise smoothing; identity when smoothing is off.
inline std::pair<double, AdaptiveState> smooth_surprise(double xi, AdaptiveState state) {
    if (!state.smooth_surprise) return {xi, state};
    if (!state.surprise_initialized) {
        state.surprise_ema = xi;
        state.surprise_initialized = true;
    } else {
        state.surprise_ema = ema_update(state.surprise_ema, xi, state.surprise_ema_rate);
    }
    return {state.surprise_ema, state};
}

/// lambda_w = max(0, h_bar/(h_max-1) - baseline), measured against the
/// baseline from before this observation; the baseline EMA is updated after.
inline std::pair<double, AdaptiveState> lambda_w(double h_bar, std::size_t h_max, AdaptiveState state) {
    if (h_max < 2) throw DomainError("h_max must be >= 2");
    const double top = static_cast<double>(h_max - 1);
    if (!(h_bar >= 0.0 && h_bar <= top + 1e-9)) throw DomainError("h_bar outside [0, h_max - 1]");
    const double raw = h_bar / top;
    if (!state.baseline_initialized) {
        state.ema_baseline = raw;
        state.baseline_initialized = true;
    }
    const double lambda = std::max(0.0, raw - state.ema_baseline);
    state.ema_baseline = ema_update(state.ema_baseline, raw, state.ema_rate);
    return {lambda, state};
}

/// beta_base - lambda * c_penalty; never above beta_base.
inline double beta_eff(const AdaptiveState& state, double lambda) {
    if (!(lambda >= 0.0)) throw DomainError("lambda_w must be >= 0");
    return state.beta_base - lambda * state.c_penalty;
}

inline double lcb_score(double q_mean, double q_std, double beta) {
    if (!(q_std >= 0.0)) throw DomainError("ensemble std must be >= 0");
    return q_mean + beta * q_std;
}

/// Index of the best LCB score; ties go to the lowest index.
inline std::size_t lcb_argmax(std::span<const double> q_mean, std::span<const double> q_std,
                              double beta) {
    if (q_mean.empty() || q_mean.size() != q_std.size())
        throw DimensionError("lcb_argmax: mean and std lengths differ");
    std::size_t best = 0;
    double best_score = lcb_score(q_mean[0], q_std[0], beta);
    for (std::size_t a = 1; a < q_mean.size(); ++a) {
        const double score = lcb_score(q_mean[a], q_std[a], beta);
        if (score > best_score) {
            best_score = score;
            best = a;
        }
    }
    return best;
}

} // namespace bapr

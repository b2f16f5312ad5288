#pragma once

// Bellman operator family on tabular Q-functions: per-mode backups, the
// belief-weighted mixture, the Q-dependent counterexample, projection and
// bounded noise, plus fixed-point and Lipschitz tooling.

#include "bapr/error.hpp"
#include "bapr/mdp_core.hpp"
#include "bapr/random.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace bapr {

inline constexpr double kBeliefTolerance = 1e-12;

template <class F>
concept QOperator = std::invocable<const F&, const QFunction&> &&
                    std::convertible_to<std::invoke_result_t<const F&, const QFunction&>, QFunction>;

using QMap = std::function<QFunction(const QFunction&)>;

/// Frozen distribution over modes: nonnegative weights summing to one.
class ModeBelief {
public:
    explicit ModeBelief(std::vector<double> weights) : weights_(std::move(weights)) {
        if (weights_.empty()) throw DomainError("mode belief needs at least one mode");
        double sum = 0.0;
        for (double w : weights_) {
            if (!std::isfinite(w) || w < 0.0) throw DomainError("mode belief weight must be >= 0");
            sum += w;
        }
        if (std::abs(sum - 1.0) > kBeliefTolerance)
            throw DomainError("mode belief weights must sum to 1");
    }

    static ModeBelief uniform(std::size_t modes) {
        return ModeBelief(std::vector<double>(modes, 1.0 / static_cast<double>(modes)));
    }

    static ModeBelief point_mass(std::size_t modes, std::size_t m) {
        std::vector<double> w(modes, 0.0);
        w.at(m) = 1.0;
        return ModeBelief(std::move(w));
    }

    /// Random belief: normalized exponentials, i.e. uniform on the simplex.
    static ModeBelief random(std::size_t modes, Rng& rng) {
        std::vector<double> w(modes);
        double sum = 0.0;
        for (double& x : w) sum += (x = rng.exponential());
        for (double& x : w) x /= sum;
        return ModeBelief(std::move(w));
    }

    std::size_t size() const noexcept { return weights_.size(); }
    std::span<const double> weights() const noexcept { return weights_; }
    double operator[](std::size_t m) const { return weights_[m]; }

    std::size_t argmax() const {
        return static_cast<std::size_t>(std::max_element(weights_.begin(), weights_.end()) -
                                        weights_.begin());
    }

private:
    std::vector<double> weights_;
};

namespace detail {

inline void check_model_shape(const ModeModel& m, const QFunction& q) {
    if (m.states != q.states() || m.actions != q.actions())
        throw DimensionError("mode model and Q-function shapes differ");
    if (m.reward.size() != m.states * m.actions || m.gamma_epi.size() != m.states * m.actions ||
        m.kernel.size() != m.states * m.actions * m.states)
        throw DimensionError("mode model tables do not match its S, A");
}

/// out(s,a) += weight * T_m Q(s,a), with V = max_a Q precomputed.
inline void accumulate_mode(const ModeModel& m, const OperatorParams& p, std::span<const double> v,
                            double weight, std::vector<double>& out) {
    for (std::size_t s = 0; s < m.states; ++s) {
        for (std::size_t a = 0; a < m.actions; ++a) {
            const auto row = m.kernel_row(s, a);
            double expected = 0.0;
            for (std::size_t n = 0; n < m.states; ++n) expected += row[n] * v[n];
            const double backup =
                m.r(s, a) + p.gamma * (expected - p.lambda_epi * m.penalty(s, a) - p.kappa);
            out[s * m.actions + a] += weight * backup;
        }
    }
}

/// Belief-weighted mixture without checking the weights. Exists so that
/// certification can demonstrate what breaks when the simplex constraint is
/// dropped; library callers go through apply_bapr_operator.
inline QFunction mix_mode_operators(std::span<const ModeModel> models,
                                    std::span<const double> weights, const OperatorParams& params,
                                    const QFunction& q) {
    if (models.empty() || models.size() != weights.size())
        throw DimensionError("number of models and belief weights differ");
    for (const auto& m : models) check_model_shape(m, q);
    const auto v = greedy_value(q);
    std::vector<double> out(q.states() * q.actions(), 0.0);
    for (std::size_t k = 0; k < models.size(); ++k)
        accumulate_mode(models[k], params, v, weights[k], out);
    return QFunction(q.states(), q.actions(), std::move(out));
}

} // namespace detail

/// T_m Q(s,a) = R_m(s,a) + gamma * (sum_s' P_m(s'|s,a) max_a' Q(s',a') - lambda_epi * Gamma_m(s,a) - kappa)
inline QFunction apply_mode_operator(const ModeModel& model, const OperatorParams& params,
                                     const QFunction& q) {
    detail::check_model_shape(model, q);
    const auto v = greedy_value(q);
    std::vector<double> out(q.states() * q.actions(), 0.0);
    detail::accumulate_mode(model, params, v, 1.0, out);
    return QFunction(q.states(), q.actions(), std::move(out));
}

/// Frozen-belief mixture sum_m rho(m) T_m Q. With a single mode and a point
/// mass this is exactly the single-regime robust-ensemble backup (penalties
/// frozen), so no separate operator exists for that case.
inline QFunction apply_bapr_operator(std::span<const ModeModel> models, const ModeBelief& belief,
                                     const OperatorParams& params, const QFunction& q) {
    if (models.size() != belief.size())
        throw DimensionError("number of models and belief weights differ");
    return detail::mix_mode_operators(models, belief.weights(), params, q);
}

/// Operator object with the belief captured by value, i.e. frozen for every
/// application.
struct BaprOperator {
    std::vector<ModeModel> models;
    ModeBelief belief;
    OperatorParams params;

    QFunction operator()(const QFunction& q) const {
        return apply_bapr_operator(models, belief, params, q);
    }
};

// --- Q-dependent counterexample ---------------------------------------------

/// One state, one action, two modes; the belief on mode 1 is lambda * Q.
struct BadOperatorParams {
    double gamma = 0.99;
    double lambda = 0.001;
    double r1 = 50.0;
    double r2 = 0.0;

    double delta() const noexcept { return r1 - r2; }
};

/// (gamma + lambda * (r1 - r2)) * q + r2
inline double apply_bad_operator(const BadOperatorParams& p, double q) {
    return (p.gamma + p.lambda * p.delta()) * q + p.r2;
}

/// Exact Lipschitz factor gamma + lambda * Delta.
inline double bad_operator_factor(const BadOperatorParams& p) {
    return p.gamma + p.lambda * p.delta();
}

enum class Stability { Contraction, Nonexpansive, Expansion };

inline Stability classify_factor(double factor, double tol = 0.0) {
    if (factor < 1.0 - tol) return Stability::Contraction;
    if (factor > 1.0 + tol) return Stability::Expansion;
    return Stability::Nonexpansive;
}

inline const char* to_string(Stability s) {
    switch (s) {
    case Stability::Contraction: return "contraction";
    case Stability::Nonexpansive: return "nonexpansive";
    case Stability::Expansion: return "expansion";
    }
    return "?";
}

/// The bad operator lifted to 1x1 Q-tables so the generic tooling applies.
inline QMap bad_operator_map(const BadOperatorParams& p) {
    return [p](const QFunction& q) {
        if (q.states() != 1 || q.actions() != 1)
            throw DimensionError("bad operator acts on a single state-action pair");
        return QFunction(1, 1, {apply_bad_operator(p, q(0, 0))});
    };
}

// --- fixed points -----------------------------------------------------------

struct FixedPointResult {
    QFunction q_star;
    std::size_t iterations = 0;
    double final_residual = 0.0; // sup-norm of the last update
    bool converged = false;
    bool diverged = false; // iterate left the finite range
};

/// Banach iteration Q <- T(Q) until the update falls below tol.
template <QOperator Op>
FixedPointResult solve_fixed_point(const Op& op, const QFunction& q0, double tol = 1e-10,
                                   std::size_t max_iter = 1'000'000) {
    if (!(tol > 0.0)) throw DomainError("fixed-point tolerance must be > 0");
    FixedPointResult result{q0, 0, std::numeric_limits<double>::infinity(), false, false};
    for (std::size_t it = 0; it < max_iter; ++it) {
        std::optional<QFunction> next;
        try {
            next.emplace(op(result.q_star));
        } catch (const DomainError&) {
            result.diverged = true;
            return result;
        }
        result.final_residual = sup_dist(*next, result.q_star);
        result.q_star = std::move(*next);
        result.iterations = it + 1;
        if (!std::isfinite(result.final_residual)) {
            result.diverged = true;
            return result;
        }
        if (result.final_residual < tol) {
            result.converged = true;
            return result;
        }
    }
    return result;
}

/// A-posteriori distance to the fixed point of a gamma-contraction after an
/// update of size `residual`.
inline double a_posteriori_error(double residual, double gamma) {
    return residual * gamma / (1.0 - gamma);
}

inline QFunction solve_mode_fixed_point(const ModeModel& model, const OperatorParams& params,
                                        double tol = 1e-10, std::size_t max_iter = 1'000'000) {
    auto op = [&](const QFunction& q) { return apply_mode_operator(model, params, q); };
    auto res = solve_fixed_point(op, QFunction::zeros(model.states, model.actions), tol, max_iter);
    if (!res.converged) throw ConvergenceError("mode fixed point did not converge");
    return std::move(res.q_star);
}

inline QFunction solve_bapr_fixed_point(std::span<const ModeModel> models,
                                        const ModeBelief& belief, const OperatorParams& params,
                                        double tol = 1e-10, std::size_t max_iter = 1'000'000) {
    if (models.empty()) throw DimensionError("no mode models");
    auto op = [&](const QFunction& q) { return apply_bapr_operator(models, belief, params, q); };
    auto res = solve_fixed_point(op, QFunction::zeros(models[0].states, models[0].actions), tol,
                                 max_iter);
    if (!res.converged) throw ConvergenceError("BAPR fixed point did not converge");
    return std::move(res.q_star);
}

// --- Lipschitz estimation ---------------------------------------------------

/// Empirical Lipschitz constant of `op` in sup norm: the largest ratio
/// sup|TQ1 - TQ2| / sup|Q1 - Q2| over `n_pairs` random pairs (entries uniform
/// in [-10, 10]) plus adversarial pairs: a unit bump at each (s,a) and a
/// uniform unit shift, both around a random base. Zero-distance pairs are
/// skipped. Deterministic in `seed`.
template <QOperator Op>
double estimate_lipschitz(const Op& op, std::size_t states, std::size_t actions,
                          std::size_t n_pairs, std::uint64_t seed) {
    if (n_pairs == 0) throw DomainError("estimate_lipschitz needs at least one pair");
    double best = 0.0;
    auto consider = [&](const QFunction& q1, const QFunction& q2) {
        const double d = sup_dist(q1, q2);
        if (d == 0.0) return;
        best = std::max(best, sup_dist(op(q1), op(q2)) / d);
    };
    for (std::size_t i = 0; i < n_pairs; ++i) {
        Rng rng(derive_seed(seed, i));
        const auto q1 = QFunction::random(states, actions, rng);
        const auto q2 = QFunction::random(states, actions, rng);
        consider(q1, q2);
    }
    Rng rng(derive_seed(seed, n_pairs));
    const auto base = QFunction::random(states, actions, rng);
    for (std::size_t i = 0; i < states * actions; ++i) {
        std::vector<double> bumped(base.values().begin(), base.values().end());
        bumped[i] += 1.0;
        consider(base, QFunction(states, actions, std::move(bumped)));
    }
    consider(base, base.shifted(1.0));
    return best;
}

// --- regime switch perturbation ---------------------------------------------

struct PerturbationResult {
    double delta_r = 0.0;    // sup |T_{k+1} Q*_k - T_k Q*_k|
    double bound = 0.0;      // delta_r / (1 - gamma)
    double actual_gap = 0.0; // sup |Q*_k - Q*_{k+1}|
    QFunction q_star_k;
    QFunction q_star_k1;
};

inline PerturbationResult regime_perturbation(const ModeModel& model_k, const ModeModel& model_k1,
                                              const OperatorParams& params, double tol = 1e-10) {
    if (model_k.states != model_k1.states || model_k.actions != model_k1.actions)
        throw DimensionError("regime_perturbation: models have different shapes");
    auto qk = solve_mode_fixed_point(model_k, params, tol);
    auto qk1 = solve_mode_fixed_point(model_k1, params, tol);
    const double delta_r =
        sup_dist(apply_mode_operator(model_k1, params, qk), apply_mode_operator(model_k, params, qk));
    const double gap = sup_dist(qk, qk1);
    return PerturbationResult{delta_r, delta_r / (1.0 - params.gamma), gap, std::move(qk),
                              std::move(qk1)};
}

/// Distance between the mixture fixed points under two frozen beliefs. This is
/// the reported belief-mismatch term; no bound is asserted on it.
inline double belief_gap(std::span<const ModeModel> models, const ModeBelief& b1,
                         const ModeBelief& b2, const OperatorParams& params, double tol = 1e-10) {
    return sup_dist(solve_bapr_fixed_point(models, b1, params, tol),
                    solve_bapr_fixed_point(models, b2, params, tol));
}

// --- projection -------------------------------------------------------------

/// Disjoint blocks covering {0..S-1}; the projection averages Q over each block.
class StatePartition {
public:
    StatePartition(std::vector<std::vector<std::size_t>> blocks, std::size_t states)
        : blocks_(std::move(blocks)), block_of_(states, states) {
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            if (blocks_[b].empty()) throw DomainError("partition block is empty");
            for (std::size_t s : blocks_[b]) {
                if (s >= states) throw DomainError("partition references an unknown state");
                if (block_of_[s] != states) throw DomainError("partition blocks overlap");
                block_of_[s] = b;
            }
        }
        for (std::size_t s = 0; s < states; ++s)
            if (block_of_[s] == states) throw DomainError("partition does not cover every state");
    }

    static StatePartition singletons(std::size_t states) {
        std::vector<std::vector<std::size_t>> blocks(states);
        for (std::size_t s = 0; s < states; ++s) blocks[s] = {s};
        return StatePartition(std::move(blocks), states);
    }

    static StatePartition single_block(std::size_t states) {
        std::vector<std::size_t> all(states);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return StatePartition({std::move(all)}, states);
    }

    /// Random assignment of states to `n_blocks` nonempty blocks.
    static StatePartition random(std::size_t states, std::size_t n_blocks, Rng& rng) {
        n_blocks = std::clamp<std::size_t>(n_blocks, 1, states);
        std::vector<std::size_t> order(states);
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = states; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        std::vector<std::vector<std::size_t>> blocks(n_blocks);
        for (std::size_t i = 0; i < states; ++i)
            blocks[i < n_blocks ? i : rng.index(n_blocks)].push_back(order[i]);
        return StatePartition(std::move(blocks), states);
    }

    std::size_t states() const noexcept { return block_of_.size(); }
    const std::vector<std::vector<std::size_t>>& blocks() const noexcept { return blocks_; }

private:
    std::vector<std::vector<std::size_t>> blocks_;
    std::vector<std::size_t> block_of_;
};

inline QFunction project(const QFunction& q, const StatePartition& partition) {
    if (partition.states() != q.states()) throw DimensionError("partition does not match Q states");
    const std::size_t A = q.actions();
    std::vector<double> out(q.states() * A);
    for (const auto& block : partition.blocks()) {
        for (std::size_t a = 0; a < A; ++a) {
            double sum = 0.0;
            for (std::size_t s : block) sum += q(s, a);
            const double mean = sum / static_cast<double>(block.size());
            for (std::size_t s : block) out[s * A + a] = mean;
        }
    }
    return QFunction(q.states(), A, std::move(out));
}

/// epsilon_proj = sup |Pi Q - Q|
inline double projection_error(const QFunction& q, const StatePartition& partition) {
    return sup_dist(project(q, partition), q);
}

// --- bounded noise ----------------------------------------------------------

/// T(Q) plus entries i.i.d. uniform in [-sigma, sigma]; deterministic in the seed.
template <QOperator Op>
QFunction apply_noisy_operator(const Op& op, double sigma, std::uint64_t rng_seed,
                               const QFunction& q) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("noise sigma must be >= 0");
    QFunction clean = op(q);
    if (sigma == 0.0) return clean;
    Rng rng(rng_seed);
    std::vector<double> v(clean.values().begin(), clean.values().end());
    for (double& x : v) x += rng.uniform(-sigma, sigma);
    return QFunction(clean.states(), clean.actions(), std::move(v));
}

// --- shared critic ----------------------------------------------------------

/// One table over (mode, state, action) holding every per-mode critic.
class SharedCritic {
public:
    SharedCritic(std::size_t modes, std::size_t states, std::size_t actions,
                 std::vector<double> values)
        : modes_(modes), states_(states), actions_(actions), values_(std::move(values)) {
        if (values_.size() != modes_ * states_ * actions_)
            throw DimensionError("shared critic size mismatch");
    }

    std::size_t modes() const noexcept { return modes_; }
    std::size_t states() const noexcept { return states_; }
    std::size_t actions() const noexcept { return actions_; }

    double operator()(std::size_t m, std::size_t s, std::size_t a) const {
        return values_[(m * states_ + s) * actions_ + a];
    }

    QFunction extract(std::size_t m) const {
        if (m >= modes_) throw DimensionError("shared critic: mode out of range");
        const auto first = values_.begin() + static_cast<std::ptrdiff_t>(m * states_ * actions_);
        return QFunction(states_, actions_,
                         std::vector<double>(first, first + static_cast<std::ptrdiff_t>(
                                                                states_ * actions_)));
    }

private:
    std::size_t modes_, states_, actions_;
    std::vector<double> values_;
};

inline SharedCritic shared_critic_from_modes(std::span<const QFunction> per_mode) {
    if (per_mode.empty()) throw DimensionError("shared critic needs at least one mode");
    const std::size_t S = per_mode[0].states(), A = per_mode[0].actions();
    std::vector<double> v;
    v.reserve(per_mode.size() * S * A);
    for (const auto& q : per_mode) {
        if (q.states() != S || q.actions() != A)
            throw DimensionError("per-mode critics have different shapes");
        v.insert(v.end(), q.values().begin(), q.values().end());
    }
    return SharedCritic(per_mode.size(), S, A, std::move(v));
}

/// sum_m rho(m) T_m Q_shared(m, ., .), reading each mode's slice straight from
/// the shared table.
inline QFunction apply_bapr_shared(std::span<const ModeModel> models, const ModeBelief& belief,
                                   const OperatorParams& params, const SharedCritic& shared) {
    if (models.size() != belief.size() || models.size() != shared.modes())
        throw DimensionError("shared critic, models and belief disagree on mode count");
    const std::size_t S = shared.states(), A = shared.actions();
    std::vector<double> out(S * A, 0.0);
    std::vector<double> v(S);
    for (std::size_t m = 0; m < models.size(); ++m) {
        const ModeModel& model = models[m];
        if (model.states != S || model.actions != A)
            throw DimensionError("mode model and shared critic shapes differ");
        for (std::size_t s = 0; s < S; ++s) {
            double best = shared(m, s, 0);
            for (std::size_t a = 1; a < A; ++a) best = std::max(best, shared(m, s, a));
            v[s] = best;
        }
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                double expected = 0.0;
                for (std::size_t n = 0; n < S; ++n) expected += model.p(s, a, n) * v[n];
                out[s * A + a] +=
                    belief[m] * (model.r(s, a) + params.gamma * (expected -
                                                                 params.lambda_epi * model.penalty(s, a) -
                                                                 params.kappa));
            }
    }
    return QFunction(S, A, std::move(out));
}

} // namespace bapr

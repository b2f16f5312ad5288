#pragma once

// Piecewise value-iteration experiment. Per iteration:
//   1. active mode from the schedule
//   2. rollout of `rollout_length` steps under the LCB-greedy ensemble policy
//   3. surprise from reward residual z-score, ensemble std ratio, TD-scale drift
//   4. BOCD (or joint) update, then lambda_w and beta_eff
//   5. mode belief update from the rollout rewards
//   6. one backup with that belief frozen, optionally projected and noisy
//   7. err against the active mode's precomputed fixed point

#include "bapr/adaptive.hpp"
#include "bapr/bocd.hpp"
#include "bapr/harness/config.hpp"
#include "bapr/harness/trace.hpp"
#include "bapr/operators.hpp"
#include "bapr/random.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace bapr::harness {

inline constexpr double kEnvelopeSlack = 1e-9;
inline constexpr double kRewardScaleFloor = 1e-6;
// Sensitivity of the Q-dependent belief used by the unfrozen-belief mutation.
inline constexpr double kUnfrozenSensitivity = 0.05;

/// The fused surprise the harness feeds to BOCD.
inline double harness_surprise(const SurpriseInputs& in, const SurpriseWeights& w,
                               const MutationSet& mutations) {
    if (mutations.count(Mutation::DroppedSurpriseClip)) return raw_surprise(in, w);
    return surprise(in, w);
}

/// Backup map for one iteration: the mixture under `belief`, then the
/// projection if any. The belief is captured by value, so every application
/// sees the same snapshot unless the unfrozen-belief mutation is active.
inline QMap make_backup(std::shared_ptr<const std::vector<ModeModel>> models, ModeBelief belief,
                        OperatorParams params, std::optional<StatePartition> partition,
                        const MutationSet& mutations) {
    const bool unnormalized = mutations.count(Mutation::UnnormalizedBelief) > 0;
    const bool unfrozen = mutations.count(Mutation::UnfrozenBelief) > 0;
    std::size_t hi = 0, lo = 0;
    if (unfrozen) {
        std::vector<double> mean_r;
        for (const auto& m : *models) {
            double s = 0.0;
            for (double r : m.reward) s += r;
            mean_r.push_back(s / static_cast<double>(m.reward.size()));
        }
        hi = static_cast<std::size_t>(std::max_element(mean_r.begin(), mean_r.end()) - mean_r.begin());
        lo = static_cast<std::size_t>(std::min_element(mean_r.begin(), mean_r.end()) - mean_r.begin());
    }
    return [models, belief, params, partition, unnormalized, unfrozen, hi, lo](const QFunction& q) {
        std::vector<double> w(belief.weights().begin(), belief.weights().end());
        if (unfrozen && hi != lo) {
            // Half the mass re-inferred from the iterate itself.
            double mean_q = 0.0;
            for (double x : q.values()) mean_q += x;
            mean_q /= static_cast<double>(q.values().size());
            const double p_hi = std::clamp(0.5 + kUnfrozenSensitivity * mean_q, 0.0, 1.0);
            for (double& x : w) x *= 0.5;
            w[hi] += 0.5 * p_hi;
            w[lo] += 0.5 * (1.0 - p_hi);
        }
        if (unnormalized)
            for (double& x : w) x *= 0.9;
        QFunction out = bapr::detail::mix_mode_operators(*models, w, params, q);
        return partition ? project(out, *partition) : out;
    };
}

struct SwitchReport {
    std::size_t iter = 0; // first iteration of the new segment
    std::size_t from = 0;
    std::size_t to = 0;
    double delta_r = 0.0;
    double e_switch = 0.0; // (delta_r + max eps_proj + sigma) / (1 - gamma)
};

struct ExperimentResult {
    ExperimentTrace trace;
    std::vector<std::string> warnings;
    std::vector<QFunction> fixed_points; // per mode, unprojected
    std::vector<double> eps_proj;        // per mode
    std::vector<double> floors;          // (eps_proj + sigma) / (1 - gamma) per mode
    std::vector<SwitchReport> switches;
    std::vector<std::size_t> segment_starts;
    std::size_t detect_steps = 0;
    double gamma = 0.0;
    double beta_base = 0.0;
};

/// Warnings for segments shorter than ceil(1/(1-gamma)) + ceil(n_delta).
inline std::vector<std::string> metastability_warnings(const ExperimentConfig& c) {
    const std::size_t contraction = static_cast<std::size_t>(std::ceil(1.0 / (1.0 - c.op.gamma)));
    const std::size_t detect = detection_steps(c.separability_L, 1.0, c.detection_delta);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < c.schedule.size(); ++i)
        if (c.schedule[i].dwell < contraction + detect)
            out.push_back("segment " + std::to_string(i) + " dwell " + std::to_string(c.schedule[i].dwell) +
                          " is shorter than the metastable minimum " + std::to_string(contraction + detect) +
                          " (contraction " + std::to_string(contraction) + " + detection " +
                          std::to_string(detect) + ")");
    return out;
}

namespace detail {

struct Welford {
    std::size_t n = 0;
    double mean = 0.0, m2 = 0.0;
    void push(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double stddev() const { return n < 2 ? 0.0 : std::sqrt(m2 / static_cast<double>(n - 1)); }
};

/// Per-entry mean and population std across ensemble members.
inline void ensemble_stats(const std::vector<QFunction>& members, std::size_t s,
                           std::vector<double>& mean, std::vector<double>& sd) {
    const std::size_t A = members[0].actions();
    mean.assign(A, 0.0);
    sd.assign(A, 0.0);
    const double k = static_cast<double>(members.size());
    for (const auto& q : members)
        for (std::size_t a = 0; a < A; ++a) mean[a] += q(s, a) / k;
    for (const auto& q : members)
        for (std::size_t a = 0; a < A; ++a) sd[a] += (q(s, a) - mean[a]) * (q(s, a) - mean[a]) / k;
    for (double& x : sd) x = std::sqrt(x);
}

/// Pooled ensemble spread: sqrt of the per-entry variance averaged over the table.
inline double pooled_ensemble_std(const std::vector<QFunction>& members) {
    if (members.size() < 2) return 0.0;
    double total = 0.0;
    std::vector<double> mean, sd;
    const std::size_t S = members[0].states();
    for (std::size_t s = 0; s < S; ++s) {
        ensemble_stats(members, s, mean, sd);
        for (double x : sd) total += x * x;
    }
    return std::sqrt(total / static_cast<double>(S * members[0].actions()));
}

inline std::size_t sample_next(std::span<const double> row, double u) {
    double acc = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        acc += row[i];
        if (u < acc) return i;
    }
    // u landed in the rounding gap above the last cumulative sum
    for (std::size_t i = row.size(); i-- > 0;)
        if (row[i] > 0.0) return i;
    return row.size() - 1;
}

} // namespace detail

inline ExperimentResult run_piecewise(const ExperimentConfig& config) {
    validate_config(config);
    auto models = std::make_shared<const std::vector<ModeModel>>(resolve_modes(config));
    const std::size_t M = models->size();
    const std::size_t S = (*models)[0].states, A = (*models)[0].actions;
    const PiecewiseSchedule schedule(config.schedule, M);
    const OperatorParams& op = config.op;
    const double gamma = op.gamma;
    std::optional<StatePartition> partition;
    if (config.projection) partition.emplace(*config.projection, S);

    ExperimentResult result;
    result.warnings = metastability_warnings(config);
    result.gamma = gamma;
    result.beta_base = config.adaptive.beta_base;
    result.detect_steps = detection_steps(config.separability_L, 1.0, config.detection_delta);
    result.segment_starts = schedule.segment_starts();
    const double sigma = config.noise_sigma;
    for (const auto& m : *models) {
        // Residual tolerance scaled so the fixed point itself is accurate to fixed_point_tol.
        result.fixed_points.push_back(solve_mode_fixed_point(m, op, config.fixed_point_tol * (1.0 - gamma)));
        const double eps = partition ? projection_error(result.fixed_points.back(), *partition) : 0.0;
        result.eps_proj.push_back(eps);
        result.floors.push_back((eps + sigma) / (1.0 - gamma));
    }
    for (std::size_t k = 1; k < schedule.segments().size(); ++k) {
        SwitchReport sw;
        sw.iter = result.segment_starts[k];
        sw.from = schedule.segments()[k - 1].mode;
        sw.to = schedule.segments()[k].mode;
        const auto& qk = result.fixed_points[sw.from];
        sw.delta_r = sup_dist(apply_mode_operator((*models)[sw.to], op, qk),
                              apply_mode_operator((*models)[sw.from], op, qk));
        sw.e_switch =
            (sw.delta_r + std::max(result.eps_proj[sw.from], result.eps_proj[sw.to]) + sigma) / (1.0 - gamma);
        result.switches.push_back(sw);
    }

    const std::uint64_t seed = config.seed;
    Rng env_rng(derive_seed(seed, 1));
    const std::uint64_t main_noise = derive_seed(seed, 2);
    QFunction q = QFunction::zeros(S, A);
    std::vector<QFunction> ensemble;
    std::vector<std::uint64_t> member_noise;
    for (std::size_t k = 0; k < config.n_ensemble; ++k) {
        Rng init(derive_seed(seed, 1000 + k));
        ensemble.push_back(QFunction::random(S, A, init, -config.ensemble_sigma, config.ensemble_sigma));
        member_noise.push_back(derive_seed(seed, 2000 + k));
    }

    const BOCDParams& bp = config.bocd.params;
    RunLengthBelief run_belief = RunLengthBelief::uniform(bp.h_max);
    JointBelief joint = JointBelief::uniform(bp.h_max, config.bocd.n_clusters);
    ClusterState clusters(config.bocd.n_clusters, 3);
    AdaptiveState adaptive = config.adaptive;
    ModeBelief mode_belief = ModeBelief::uniform(M);
    detail::Welford reward_stats;
    double sigma_q_ema = 0.0;
    bool sigma_q_init = false;
    double kappa_ema = 0.0;
    bool kappa_init = false;
    double last_td = 0.0;
    double beta_prev = adaptive.beta_base;
    std::size_t env_state = 0;

    const std::size_t T = schedule.total_iterations();
    std::size_t segment = 0;
    std::vector<double> mean_row, sd_row;
    result.trace.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        while (segment + 1 < result.segment_starts.size() && t >= result.segment_starts[segment + 1]) ++segment;
        const std::size_t mode = schedule.mode_at(t);
        const ModeModel& env = (*models)[mode];

        // rollout under the pre-iteration beta_eff
        std::vector<std::size_t> vs, va;
        std::vector<double> vr;
        for (std::size_t step = 0; step < config.rollout_length; ++step) {
            std::size_t a;
            if (ensemble.empty()) {
                const auto row = q.row(env_state);
                a = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            } else {
                detail::ensemble_stats(ensemble, env_state, mean_row, sd_row);
                a = lcb_argmax(mean_row, sd_row, beta_prev);
            }
            double r = env.r(env_state, a);
            if (config.reward_noise > 0.0) r += config.reward_noise * env_rng.normal();
            vs.push_back(env_state);
            va.push_back(a);
            vr.push_back(r);
            env_state = detail::sample_next(env.kernel_row(env_state, a), env_rng.uniform01());
        }

        // surprise channels
        double sq = 0.0;
        for (std::size_t i = 0; i < vr.size(); ++i) {
            double pred = 0.0;
            for (std::size_t m = 0; m < M; ++m) pred += mode_belief[m] * (*models)[m].r(vs[i], va[i]);
            sq += (vr[i] - pred) * (vr[i] - pred);
            reward_stats.push(vr[i]);
        }
        SurpriseInputs in;
        in.reward_z = std::sqrt(sq / static_cast<double>(vr.size())) /
                      std::max(reward_stats.stddev(), kRewardScaleFloor);
        const double sigma_q = detail::pooled_ensemble_std(ensemble);
        if (!sigma_q_init) {
            in.q_std_ratio = sigma_q > 0.0 ? 1.0 : 0.0;
            sigma_q_ema = sigma_q;
            sigma_q_init = true;
        } else {
            in.q_std_ratio = sigma_q_ema > 0.0 ? sigma_q / sigma_q_ema : (sigma_q > 0.0 ? 1.0 : 0.0);
            sigma_q_ema = ema_update(sigma_q_ema, sigma_q, adaptive.ema_rate);
        }
        const double kappa_t = op.kappa + last_td;
        if (!kappa_init) {
            kappa_ema = kappa_t;
            kappa_init = true;
        }
        in.kappa_div = std::abs(kappa_t - kappa_ema);
        kappa_ema = ema_update(kappa_ema, kappa_t, adaptive.ema_rate);

        double xi = harness_surprise(in, config.surprise, config.mutations);
        std::tie(xi, adaptive) = smooth_surprise(xi, adaptive);

        // change detection
        if (config.bocd.joint) {
            const double signal[3] = {in.reward_z, in.q_std_ratio, in.kappa_div};
            std::size_t z;
            std::tie(z, clusters) = cluster_assign(signal, std::move(clusters));
            joint = joint_step(joint, xi, z, bp, config.bocd.stickiness);
            run_belief = RunLengthBelief(joint.marginal_h());
        } else {
            run_belief = bocd_step(run_belief, xi, bp);
        }
        const double h_bar = expected_run_length(run_belief);
        double lam;
        std::tie(lam, adaptive) = lambda_w(std::min(h_bar, static_cast<double>(bp.h_max - 1)), bp.h_max, adaptive);
        const double beta = beta_eff(adaptive, lam);

        // mode belief: hazard-mixed prior, Gaussian reward likelihood
        std::vector<double> prior(M), loglik(M, 0.0);
        for (std::size_t m = 0; m < M; ++m) {
            prior[m] = (1.0 - bp.hazard) * mode_belief[m] + bp.hazard / static_cast<double>(M);
            for (std::size_t i = 0; i < vr.size(); ++i) {
                const double d = vr[i] - (*models)[m].r(vs[i], va[i]);
                loglik[m] -= d * d / (2.0 * config.mode_obs_sigma * config.mode_obs_sigma);
            }
        }
        const double top = *std::max_element(loglik.begin(), loglik.end());
        std::vector<double> lik(M);
        for (std::size_t m = 0; m < M; ++m) lik[m] = std::exp(loglik[m] - top);
        mode_belief = ModeBelief(bayes_update(prior, lik));

        // frozen-belief backup
        const std::size_t seg_start = result.segment_starts[segment];
        const bool in_detection = segment > 0 && t < seg_start + result.detect_steps;
        if (config.detection_hold && in_detection) {
            last_td = 0.0;
        } else {
            const QMap backup = make_backup(models, mode_belief, op, partition, config.mutations);
            QFunction next = apply_noisy_operator(backup, sigma, derive_seed(main_noise, t), q);
            last_td = sup_dist(next, q);
            q = std::move(next);
            for (std::size_t k = 0; k < ensemble.size(); ++k)
                ensemble[k] = apply_noisy_operator(backup, config.ensemble_sigma,
                                                   derive_seed(member_noise[k], t), ensemble[k]);
        }

        TraceRow row;
        row.iter = t;
        row.true_mode = mode;
        row.xi = xi;
        row.h_bar = h_bar;
        row.entropy = belief_entropy(run_belief);
        row.lambda_w = lam;
        row.beta_eff = beta;
        row.err = sup_dist(q, result.fixed_points[mode]);
        if (in_detection)
            row.phase = Phase::Detection;
        else if (row.err <= 1.1 * result.floors[mode] + kEnvelopeSlack)
            row.phase = Phase::Steady;
        else
            row.phase = Phase::Contraction;
        result.trace.push_back(row);
        beta_prev = beta;
    }
    return result;
}

/// The run-level properties asserted on a piecewise experiment.
struct PiecewiseCheck {
    double max_jump_violation = -1e300;     // err - (E_switch + carried transient) over detection rows
    double max_envelope_violation = -1e300; // err - geometric envelope over post-detection rows
    bool lambda_rises = true;               // lambda_w > 0 within ceil(n_delta)+1 iterations of each switch
    bool lambda_settles = true;             // lambda_w < 0.01 at every segment end
    bool beta_bounded = true;               // beta_eff <= beta_base everywhere
    std::vector<std::string> failures;

    bool ok() const {
        return max_jump_violation <= 0.0 && max_envelope_violation <= 0.0 && lambda_rises && lambda_settles &&
               beta_bounded;
    }
};

inline PiecewiseCheck analyze_piecewise(const ExperimentResult& r) {
    PiecewiseCheck c;
    const auto& tr = r.trace;
    const std::size_t T = tr.size();
    const std::size_t n_seg = r.segment_starts.size();
    for (std::size_t k = 0; k < n_seg; ++k) {
        const std::size_t start = r.segment_starts[k];
        const std::size_t end = k + 1 < n_seg ? r.segment_starts[k + 1] : T;
        const std::size_t mode = tr[start].true_mode;
        std::size_t t_detect = start;
        if (k > 0) {
            const auto& sw = r.switches[k - 1];
            // excess of the pre-switch iterate over its own floor carries into the jump
            const double carried = std::max(0.0, tr[start - 1].err - r.floors[sw.from]);
            t_detect = std::min(start + r.detect_steps, end - 1);
            for (std::size_t t = start; t < std::max(t_detect, start + 1); ++t)
                c.max_jump_violation =
                    std::max(c.max_jump_violation, tr[t].err - (sw.e_switch + carried + kEnvelopeSlack));
            bool rose = false;
            for (std::size_t t = start; t < end && t <= start + r.detect_steps + 1; ++t) rose = rose || tr[t].lambda_w > 0.0;
            if (!rose) {
                c.lambda_rises = false;
                c.failures.push_back("lambda_w stayed 0 after the switch at " + std::to_string(start));
            }
        }
        const double e0 = tr[t_detect].err;
        for (std::size_t t = t_detect; t < end; ++t) {
            const double env = std::pow(r.gamma, static_cast<double>(t - t_detect)) * e0 + r.floors[mode] + kEnvelopeSlack;
            c.max_envelope_violation = std::max(c.max_envelope_violation, tr[t].err - env);
        }
        if (!(tr[end - 1].lambda_w < 0.01)) {
            c.lambda_settles = false;
            c.failures.push_back("lambda_w = " + std::to_string(tr[end - 1].lambda_w) + " at segment end " +
                                 std::to_string(end - 1));
        }
    }
    for (const auto& row : tr)
        if (row.beta_eff > r.beta_base) c.beta_bounded = false;
    if (c.max_jump_violation > 0.0) c.failures.push_back("post-switch error exceeded E_switch");
    if (c.max_envelope_violation > 0.0) c.failures.push_back("geometric envelope violated");
    if (!c.beta_bounded) c.failures.push_back("beta_eff exceeded beta_base");
    return c;
}

} // namespace bapr::harness

#pragma once

// Runtime certification suites. Every operator check goes through the same
// backup factory the experiment loop uses, so injected mutations surface as
// named failures. Reports carry no timings and are byte-stable per seed.

#include "bapr/adaptive.hpp"
#include "bapr/bocd.hpp"
#include "bapr/harness/config.hpp"
#include "bapr/harness/piecewise.hpp"
#include "bapr/harness/sweeps.hpp"
#include "bapr/harness/trace.hpp"
#include "bapr/operators.hpp"
#include "bapr/random.hpp"
#include "bapr/rmdm.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace bapr::harness {

struct CertEntry {
    std::string name;
    std::size_t tested_instances = 0;
    double max_violation = 0.0; // worst value of the checked statistic
    double tolerance = 0.0;
    bool pass = false;
    std::string statistic; // what max_violation measures

    friend bool operator==(const CertEntry&, const CertEntry&) = default;
};

struct CertificationReport {
    std::uint64_t seed = 0;
    std::vector<std::string> mutations;
    std::vector<CertEntry> entries;

    bool all_pass() const {
        return std::all_of(entries.begin(), entries.end(), [](const CertEntry& e) { return e.pass; });
    }
    const CertEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
    std::vector<std::string> failures() const {
        std::vector<std::string> out;
        for (const auto& e : entries)
            if (!e.pass) out.push_back(e.name);
        return out;
    }

    friend bool operator==(const CertificationReport&, const CertificationReport&) = default;
};

inline nlohmann::json report_to_json(const CertificationReport& r) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries)
        entries.push_back({{"name", e.name},
                           {"tested_instances", e.tested_instances},
                           {"max_violation", e.max_violation},
                           {"tolerance", e.tolerance},
                           {"pass", e.pass},
                           {"statistic", e.statistic}});
    return {{"seed", r.seed}, {"mutations", r.mutations}, {"all_pass", r.all_pass()}, {"entries", entries}};
}

inline CertificationReport report_from_json(const nlohmann::json& j) {
    CertificationReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.mutations = j.at("mutations").get<std::vector<std::string>>();
    for (const auto& e : j.at("entries"))
        r.entries.push_back(CertEntry{e.at("name").get<std::string>(), e.at("tested_instances").get<std::size_t>(),
                                      e.at("max_violation").get<double>(), e.at("tolerance").get<double>(),
                                      e.at("pass").get<bool>(), e.at("statistic").get<std::string>()});
    return r;
}

namespace cert {

/// Accumulates the worst statistic; passes when it stays at or below tolerance.
struct Tally {
    std::string name, statistic;
    double tolerance;
    std::size_t n = 0;
    double worst = -std::numeric_limits<double>::infinity();

    void add(double v) {
        ++n;
        if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
        worst = std::max(worst, v);
    }
    CertEntry entry() const { return {name, n, worst, tolerance, n > 0 && worst <= tolerance, statistic}; }
};

struct RandomInstance {
    std::shared_ptr<const std::vector<ModeModel>> models;
    ModeBelief belief;
    std::size_t S, A;
};

inline RandomInstance random_instance(Rng& rng, std::size_t max_s, std::size_t max_a, std::size_t max_m,
                                      std::size_t min_m = 1) {
    const std::size_t S = 1 + rng.index(max_s), A = 1 + rng.index(max_a);
    const std::size_t M = min_m + rng.index(max_m - min_m + 1);
    std::vector<ModeModel> models;
    for (std::size_t m = 0; m < M; ++m) models.push_back(make_random_mode(rng.next(), S, A));
    return {std::make_shared<const std::vector<ModeModel>>(std::move(models)), ModeBelief::random(M, rng), S, A};
}

inline QMap backup_for(const RandomInstance& inst, const OperatorParams& params, const MutationSet& mut,
                       std::optional<StatePartition> partition = std::nullopt) {
    return make_backup(inst.models, inst.belief, params, std::move(partition), mut);
}

} // namespace cert

/// Lipschitz estimate of the frozen-belief backup: 50 mode sets x 50 beliefs
/// for each gamma in {0.5, 0.9, 0.99}.
inline CertEntry check_contraction(std::uint64_t seed, const MutationSet& mut, std::size_t n_sets = 50,
                                   std::size_t n_beliefs = 50) {
    cert::Tally t{"bapr_contraction", "max over instances of L_hat - gamma", 1e-10};
    Rng rng(seed);
    for (double gamma : {0.5, 0.9, 0.99}) {
        const OperatorParams params{gamma, 1.0, 0.0};
        for (std::size_t set = 0; set < n_sets; ++set) {
            auto inst = cert::random_instance(rng, 8, 4, 5);
            for (std::size_t b = 0; b < n_beliefs; ++b) {
                inst.belief = ModeBelief::random(inst.models->size(), rng);
                const auto op = cert::backup_for(inst, params, mut);
                t.add(estimate_lipschitz(op, inst.S, inst.A, 8, rng.next()) - gamma);
            }
        }
    }
    return t.entry();
}

inline CertEntry check_monotonicity(std::uint64_t seed, const MutationSet& mut, std::size_t n = 1000) {
    cert::Tally t{"bapr_monotonicity", "max over instances of sup(T Q1 - T Q2) with Q1 <= Q2", 1e-12};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto inst = cert::random_instance(rng, 8, 4, 5);
        const OperatorParams params{rng.uniform(0.0, 0.999), rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0)};
        const auto op = cert::backup_for(inst, params, mut);
        const auto q1 = QFunction::random(inst.S, inst.A, rng);
        std::vector<double> v(q1.values().begin(), q1.values().end());
        for (double& x : v) x += rng.uniform(0.0, 5.0);
        const auto t1 = op(q1), t2 = op(QFunction(inst.S, inst.A, std::move(v)));
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < t1.values().size(); ++k) worst = std::max(worst, t1.values()[k] - t2.values()[k]);
        t.add(worst);
    }
    return t.entry();
}

inline CertEntry check_discounting(std::uint64_t seed, const MutationSet& mut, std::size_t n = 1000) {
    cert::Tally t{"bapr_discounting", "max over instances of sup|T(Q+c) - T Q - gamma c|", 1e-12};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto inst = cert::random_instance(rng, 8, 4, 5);
        const OperatorParams params{rng.uniform(0.0, 0.999), rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0)};
        const auto op = cert::backup_for(inst, params, mut);
        const auto q = QFunction::random(inst.S, inst.A, rng);
        const double c = rng.uniform(-5.0, 5.0);
        const auto shifted = op(q.shifted(c)), base = op(q);
        double worst = 0.0;
        for (std::size_t k = 0; k < base.values().size(); ++k)
            worst = std::max(worst, std::abs(shifted.values()[k] - base.values()[k] - params.gamma * c));
        t.add(worst);
    }
    return t.entry();
}

/// Negative control: with weights summing to 0.9 the discounting identity must
/// break on every instance.
inline CertEntry check_discounting_needs_normalization(std::uint64_t seed, std::size_t n = 1000) {
    constexpr double kTrip = 1e-6;
    cert::Tally t{"bapr_discounting_requires_normalized_belief",
                  "max over instances of (1e-6 - sup|T(Q+c) - T Q - gamma c|) with weights summing to 0.9", 0.0};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto inst = cert::random_instance(rng, 8, 4, 5);
        const OperatorParams params{rng.uniform(0.1, 0.999), rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0)};
        std::vector<double> w(inst.belief.weights().begin(), inst.belief.weights().end());
        for (double& x : w) x *= 0.9;
        const auto q = QFunction::random(inst.S, inst.A, rng);
        const double c = rng.uniform(1.0, 5.0) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
        const auto shifted = bapr::detail::mix_mode_operators(*inst.models, w, params, q.shifted(c));
        const auto base = bapr::detail::mix_mode_operators(*inst.models, w, params, q);
        double dev = 0.0;
        for (std::size_t k = 0; k < base.values().size(); ++k)
            dev = std::max(dev, std::abs(shifted.values()[k] - base.values()[k] - params.gamma * c));
        t.add(kTrip - dev);
    }
    auto e = t.entry();
    e.pass = e.tested_instances > 0 && e.max_violation < 0.0;
    return e;
}

inline CertEntry check_bad_operator_factor(std::uint64_t seed, std::size_t n = 1000) {
    cert::Tally t{"bad_operator_exact_factor", "max over pairs of |ratio - (gamma + lambda Delta)|", 1e-12};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double r2 = rng.uniform(-10.0, 10.0);
        const BadOperatorParams p{rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.01), r2 + rng.uniform(0.0, 60.0), r2};
        const double q1 = rng.uniform(-100.0, 100.0);
        const double q2 = q1 + (rng.uniform(1.0, 50.0) * (rng.uniform01() < 0.5 ? -1.0 : 1.0));
        const double ratio = std::abs(apply_bad_operator(p, q1) - apply_bad_operator(p, q2)) / std::abs(q1 - q2);
        t.add(std::abs(ratio - bad_operator_factor(p)));
    }
    // the published instance
    const BadOperatorParams paper{0.99, 0.001, 50.0, 0.0};
    t.add(std::abs(std::abs(apply_bad_operator(paper, 3.0) - apply_bad_operator(paper, 1.0)) / 2.0 - 1.04));
    return t.entry();
}

inline CertEntry check_threshold_map() {
    cert::Tally t{"threshold_phase_map", "mismatched cells against gamma + lambda Delta = 1", 0.0};
    const auto map = run_default_threshold_sweep();
    for (const auto& c : map.cells) t.add(c.observed != c.analytic ? 1.0 : 0.0);
    const auto spot = run_threshold_sweep({0.5, 0.99}, {0.2, 0.05}, 200);
    t.add(spot.at(0, 0).observed == TrajectoryClass::Converged ? 0.0 : 1.0);
    t.add(spot.at(1, 1).observed == TrajectoryClass::Diverged ? 0.0 : 1.0);
    // the published instance is expanding and its trajectory leaves every bound
    const BadOperatorParams paper{0.99, 0.001, 50.0, 0.0};
    const auto fp = solve_fixed_point(bad_operator_map(paper), QFunction::constant(1, 1, 1.0), 1e-10, 100000);
    t.add(classify_factor(bad_operator_factor(paper)) == Stability::Expansion && fp.diverged ? 0.0 : 1.0);
    return t.entry();
}

/// Published n_delta values for the four scenarios of delay_scenarios().
inline const std::vector<double>& reference_delays() {
    static const std::vector<double> v = {0.9, 2.2, 8.2, 3.8};
    return v;
}

inline CertEntry check_delay_table(std::uint64_t seed) {
    cert::Tally t{"detection_delay_table",
                  "max over rows of max(|n_delta - published| - 0.1, empirical outside [ceil, ceil + 1])", 0.0};
    const auto table = run_delay_table(seed);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& r = table[i];
        t.add(std::abs(r.n_delta - reference_delays()[i]) - 0.1);
        t.add(r.empirical >= r.ceil_n && r.empirical <= r.ceil_n + 1 ? 0.0 : 1.0);
    }
    return t.entry();
}

inline CertEntry check_simplex(std::uint64_t seed, std::size_t n = 100000) {
    cert::Tally t{"simplex_preservation", "max over calls of max(|sum - 1|, -min entry, |marginal sums - 1|)", 1e-12};
    Rng rng(seed);
    auto random_simplex = [&](std::size_t k) {
        std::vector<double> v(k);
        double s = 0.0;
        for (double& x : v) s += (x = rng.exponential());
        for (double& x : v) x /= s;
        return v;
    };
    auto stat = [](std::span<const double> p) {
        double s = 0.0, neg = 0.0;
        for (double x : p) {
            s += x;
            neg = std::max(neg, -x);
        }
        return std::max(std::abs(s - 1.0), neg);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t kind = i % 3;
        const std::size_t H = 2 + rng.index(29);
        BOCDParams params{H, rng.uniform(0.001, 0.5), rng.uniform(0.01, 1.0), rng.uniform(0.0, 0.5)};
        const double xi = rng.uniform(0.0, 3.0);
        if (kind == 0) {
            const auto next = bocd_step(RunLengthBelief(random_simplex(H)), xi, params);
            t.add(stat(next.probs()));
        } else if (kind == 1) {
            const std::size_t Z = 1 + rng.index(6);
            const auto next = joint_step(JointBelief(H, Z, random_simplex(H * Z)), xi, rng.index(Z), params,
                                         rng.uniform(0.01, 1.0));
            t.add(std::max({stat(next.probs()), stat(next.marginal_h()), stat(next.marginal_z())}));
        } else {
            const std::size_t K = 1 + rng.index(30);
            std::vector<double> lik(K);
            for (double& x : lik) x = std::exp(-rng.uniform(0.0, 50.0));
            t.add(stat(bayes_update(random_simplex(K), lik)));
        }
    }
    return t.entry();
}

inline CertEntry check_beta_safety() {
    cert::Tally t{"beta_eff_safety", "max over grid of max(beta_eff - beta_base, beta_eff(next lambda) - beta_eff)", 0.0};
    constexpr std::size_t kGrid = 100;
    for (std::size_t j = 0; j < kGrid; ++j) {
        AdaptiveState state;
        state.c_penalty = 5.0 * static_cast<double>(j) / static_cast<double>(kGrid - 1);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < kGrid; ++i) {
            const double lam = 5.0 * static_cast<double>(i) / static_cast<double>(kGrid - 1);
            const double b = beta_eff(state, lam);
            t.add(std::max(b - state.beta_base, i == 0 ? -1.0 : b - prev));
            prev = b;
        }
    }
    return t.entry();
}

/// Projected noisy value iteration against e(n) <= gamma^n e(0) + (eps_proj + sigma)/(1 - gamma),
/// plus the late-trajectory floor check.
inline CertEntry check_error_budget(std::uint64_t seed, const MutationSet& mut, std::size_t n_configs = 20,
                                    std::size_t horizon = 500) {
    cert::Tally t{"combined_error_budget",
                  "max over configs and n of max(e(n) - envelope, late e(n) - 1.05 floor)", 1e-9};
    Rng rng(seed);
    const double gamma = 0.9;
    const OperatorParams params{gamma, 1.0, 0.0};
    for (std::size_t c = 0; c < n_configs; ++c) {
        auto inst = cert::random_instance(rng, 8, 4, 1);
        inst.S = std::max<std::size_t>(inst.S, 2);
        inst.models = std::make_shared<const std::vector<ModeModel>>(
            std::vector<ModeModel>{make_random_mode(rng.next(), inst.S, inst.A)});
        inst.belief = ModeBelief::point_mass(1, 0);
        const auto partition = StatePartition::random(inst.S, 1 + rng.index(inst.S), rng);
        const double sigma = rng.uniform(0.01, 0.5);
        const auto q_star = solve_mode_fixed_point((*inst.models)[0], params, 1e-10 * (1.0 - gamma));
        const double floor = (projection_error(q_star, partition) + sigma) / (1.0 - gamma);
        const auto op = cert::backup_for(inst, params, mut, partition);
        QFunction q = QFunction::random(inst.S, inst.A, rng);
        const double e0 = sup_dist(q, q_star);
        const std::uint64_t noise = rng.next();
        for (std::size_t n = 1; n <= horizon; ++n) {
            q = apply_noisy_operator(op, sigma, derive_seed(noise, n), q);
            const double e = sup_dist(q, q_star);
            t.add(e - (std::pow(gamma, static_cast<double>(n)) * e0 + floor));
            if (n > horizon - 100) t.add(e - 1.05 * floor);
        }
    }
    return t.entry();
}

inline CertEntry check_perturbation(std::uint64_t seed, std::size_t n = 100) {
    cert::Tally t{"regime_perturbation", "max over pairs of gap - Delta_R/(1 - gamma)", 1e-8};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t S = 1 + rng.index(8), A = 1 + rng.index(4);
        const OperatorParams params{rng.uniform(0.5, 0.95), 1.0, 0.0};
        const auto res = regime_perturbation(make_random_mode(rng.next(), S, A), make_random_mode(rng.next(), S, A),
                                             params, 1e-10 * (1.0 - params.gamma));
        t.add(res.actual_gap - res.bound);
    }
    return t.entry();
}

inline CertEntry check_perturbation_tightness(std::uint64_t seed, std::size_t n = 100) {
    cert::Tally t{"perturbation_tightness", "max over shifted pairs of |gap - |c|/(1 - gamma)|", 1e-8};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t S = 1 + rng.index(8), A = 1 + rng.index(4);
        const OperatorParams params{rng.uniform(0.5, 0.95), 1.0, 0.0};
        const auto base = make_random_mode(rng.next(), S, A);
        const double c = rng.uniform(-2.0, 2.0);
        const auto res = regime_perturbation(base, with_reward_shift(base, c), params, 1e-10 * (1.0 - params.gamma));
        t.add(std::max(std::abs(res.actual_gap - std::abs(c) / (1.0 - params.gamma)),
                       std::abs(res.actual_gap - res.bound)));
    }
    return t.entry();
}

/// The two-mode, dwell-200, gamma = 0.9 experiment used for the piecewise checks.
inline ExperimentConfig piecewise_certification_config(std::uint64_t seed, const MutationSet& mut) {
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.modes = {GeneratedMode{derive_seed(seed, 11), 30, 4, 0.0, 1.0},
               GeneratedMode{derive_seed(seed, 12), 30, 4, 0.0, 1.0}};
    c.schedule = {{0, 200}, {1, 200}, {0, 200}, {1, 200}};
    c.seed = seed;
    c.mutations = mut;
    return c;
}

inline CertEntry check_piecewise(std::uint64_t seed, const MutationSet& mut) {
    cert::Tally t{"piecewise_three_phase",
                  "max of (jump - E_switch, err - envelope, failed lambda_w/beta_eff/determinism flags)", 0.0};
    const auto config = piecewise_certification_config(seed, mut);
    const auto result = run_piecewise(config);
    const auto check = analyze_piecewise(result);
    t.add(check.max_jump_violation);
    t.add(check.max_envelope_violation);
    t.add(check.lambda_rises ? 0.0 : 1.0);
    t.add(check.lambda_settles ? 0.0 : 1.0);
    t.add(check.beta_bounded ? 0.0 : 1.0);
    t.add(run_piecewise(config).trace == result.trace ? 0.0 : 1.0);
    return t.entry();
}

/// Two-mode data in R^4: mode clusters around opposite directions with small noise.
inline std::vector<LabeledState> separable_context_dataset(std::uint64_t seed, std::size_t per_mode = 20) {
    Rng rng(seed);
    const std::vector<std::vector<double>> centers = {{1.0, 0.5, 0.0, -0.5}, {-0.5, 0.0, 1.0, 0.5}};
    std::vector<LabeledState> data;
    for (int m = 0; m < 2; ++m)
        for (std::size_t i = 0; i < per_mode; ++i) {
            LabeledState x{centers[static_cast<std::size_t>(m)], m};
            for (double& v : x.state) v += rng.normal(0.0, 0.1);
            data.push_back(std::move(x));
        }
    return data;
}

inline double mode_mean_distance(const EmbeddingBatch& batch) {
    const auto means = mode_means(batch);
    double sq = 0.0;
    for (std::size_t d = 0; d < batch.dim; ++d) sq += (means[d] - means[batch.dim + d]) * (means[d] - means[batch.dim + d]);
    return std::sqrt(sq);
}

inline CertEntry check_rmdm(std::uint64_t seed) {
    cert::Tally t{"rmdm_behavior",
                  "max of (diversity non-decrease steps, |consistency - sqrt(eps)|, 0.5 - fitted mode-mean distance)",
                  1e-12};
    const RMDMConfig config;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 20; ++i) {
        const double sep = 3.0 * static_cast<double>(i) / 19.0;
        const std::vector<double> means = {-sep / 2.0, 0.0, sep / 2.0, 0.0};
        const double loss = diversity_loss(means, 2, config.r_rbf, config.eps);
        t.add(loss < prev ? 0.0 : 1.0);
        prev = loss;
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < 20; ++i) {
        const std::size_t dim = 1 + rng.index(4), per = 2 + rng.index(5);
        std::vector<double> v;
        std::vector<int> ids;
        for (int m = 0; m < 3; ++m) {
            std::vector<double> e(dim);
            for (double& x : e) x = rng.uniform(-1.0, 1.0);
            for (std::size_t k = 0; k < per; ++k) {
                v.insert(v.end(), e.begin(), e.end());
                ids.push_back(m);
            }
        }
        t.add(std::abs(consistency_loss(EmbeddingBatch(dim, v, ids), config.eps) - std::sqrt(config.eps)));
    }
    const auto data = separable_context_dataset(seed);
    const auto fit = fit_linear_context(data, config, 100, 0.05, seed);
    t.add(0.5 - mode_mean_distance(fit.map.embed_all(data, config.eps)));
    return t.entry();
}

inline CertEntry check_shared_critic(std::uint64_t seed, std::size_t n = 100) {
    cert::Tally t{"shared_critic_equivalence", "max over instances of sup|per-mode path - shared path|", 1e-12};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto inst = cert::random_instance(rng, 8, 4, 5);
        const OperatorParams params{rng.uniform(0.0, 0.999), rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0)};
        std::vector<QFunction> per_mode;
        for (std::size_t m = 0; m < inst.models->size(); ++m) per_mode.push_back(QFunction::random(inst.S, inst.A, rng));
        std::vector<double> direct(inst.S * inst.A, 0.0);
        for (std::size_t m = 0; m < per_mode.size(); ++m) {
            const auto tm = apply_mode_operator((*inst.models)[m], params, per_mode[m]);
            for (std::size_t k = 0; k < direct.size(); ++k) direct[k] += inst.belief[m] * tm.values()[k];
        }
        const auto shared = apply_bapr_shared(*inst.models, inst.belief, params, shared_critic_from_modes(per_mode));
        t.add(sup_dist(QFunction(inst.S, inst.A, std::move(direct)), shared));
    }
    return t.entry();
}

inline CertEntry check_surprise_clip(std::uint64_t seed, const MutationSet& mut, std::size_t n = 10000) {
    const SurpriseWeights w;
    cert::Tally t{"surprise_clip_bound", "max over inputs of max(xi - clip_max, -xi)", 0.0};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double scale = std::pow(10.0, rng.uniform(-3.0, 6.0));
        const SurpriseInputs in{rng.uniform(-1.0, 1.0) * scale, rng.uniform01() * scale, rng.uniform01() * scale};
        const double xi = harness_surprise(in, w, mut);
        t.add(std::max(xi - w.clip_max, -xi));
    }
    t.add(harness_surprise({1e6, 1e6, 1e6}, w, mut) == w.clip_max ? 0.0 : 1.0);
    return t.entry();
}

/// Backups as built by the experiment loop, with and without projection.
inline CertEntry check_frozen_backup(std::uint64_t seed, const MutationSet& mut, std::size_t n = 200) {
    cert::Tally t{"frozen_belief_backup", "max over backups of L_hat - gamma", 1e-10};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto inst = cert::random_instance(rng, 8, 4, 5, 2);
        const OperatorParams params{rng.uniform(0.5, 0.99), 1.0, 0.0};
        std::optional<StatePartition> partition;
        if (i % 2 == 1) partition = StatePartition::random(inst.S, 1 + rng.index(inst.S), rng);
        const auto op = cert::backup_for(inst, params, mut, partition);
        t.add(estimate_lipschitz(op, inst.S, inst.A, 8, rng.next()) - params.gamma);
    }
    return t.entry();
}

inline CertEntry check_trace_round_trip(std::uint64_t seed) {
    cert::Tally t{"trace_round_trip", "rows differing after CSV -> parse -> JSON -> parse", 0.0};
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.modes = {GeneratedMode{1, 6, 3, 0.0, 1.0}, GeneratedMode{2, 6, 3, 0.0, 1.0}};
    c.schedule = {{0, 40}, {1, 40}};
    c.seed = seed;
    const auto trace = run_piecewise(c).trace;
    const auto back = trace_from_json(trace_to_json(trace_from_csv(trace_to_csv(trace))));
    t.add(back.size() == trace.size() ? 0.0 : 1.0);
    double diff = 0.0;
    for (std::size_t i = 0; i < std::min(back.size(), trace.size()); ++i) diff += back[i] == trace[i] ? 0.0 : 1.0;
    t.add(diff);
    return t.entry();
}

struct CertifyConfig {
    std::uint64_t seed = 0;
    MutationSet mutations;
};

inline CertificationReport run_certification(const CertifyConfig& cfg) {
    CertificationReport r;
    r.seed = cfg.seed;
    for (Mutation m : cfg.mutations) r.mutations.push_back(to_string(m));
    const auto& mut = cfg.mutations;
    auto s = [&](std::uint64_t k) { return derive_seed(cfg.seed, k); };
    r.entries.push_back(check_contraction(s(1), mut));
    r.entries.push_back(check_monotonicity(s(2), mut));
    r.entries.push_back(check_discounting(s(3), mut));
    r.entries.push_back(check_discounting_needs_normalization(s(4)));
    r.entries.push_back(check_bad_operator_factor(s(5)));
    r.entries.push_back(check_threshold_map());
    r.entries.push_back(check_delay_table(s(6)));
    r.entries.push_back(check_simplex(s(7)));
    r.entries.push_back(check_beta_safety());
    r.entries.push_back(check_error_budget(s(8), mut));
    r.entries.push_back(check_perturbation(s(9)));
    r.entries.push_back(check_perturbation_tightness(s(10)));
    r.entries.push_back(check_piecewise(s(11), mut));
    r.entries.push_back(check_rmdm(s(12)));
    r.entries.push_back(check_shared_critic(s(13)));
    r.entries.push_back(check_surprise_clip(s(14), mut));
    r.entries.push_back(check_frozen_backup(s(15), mut));
    r.entries.push_back(check_trace_round_trip(s(16)));
    return r;
}

} // namespace bapr::harness

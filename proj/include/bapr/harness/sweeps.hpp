#pragma once

// Threshold phase map for the Q-dependent operator and the detection-delay table.

#include "bapr/bocd.hpp"
#include "bapr/error.hpp"
#include "bapr/operators.hpp"
#include "bapr/random.hpp"

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace bapr::harness {

// Relative band around 1 inside which a cell counts as stalled.
inline constexpr double kStallBand = 1e-9;

enum class TrajectoryClass { Converged, Stalled, Diverged };

inline const char* to_string(TrajectoryClass c) {
    switch (c) {
    case TrajectoryClass::Converged: return "converged";
    case TrajectoryClass::Stalled: return "stalled";
    case TrajectoryClass::Diverged: return "diverged";
    }
    return "?";
}

inline TrajectoryClass classify_rate(double rate) {
    if (rate < 1.0 - kStallBand) return TrajectoryClass::Converged;
    if (rate > 1.0 + kStallBand) return TrajectoryClass::Diverged;
    return TrajectoryClass::Stalled;
}

struct SweepCell {
    double gamma = 0.0;
    double lambda_delta = 0.0;
    double rate = 0.0; // (d_n / d_0)^(1/n) from two trajectories, d_0 = 1
    TrajectoryClass observed = TrajectoryClass::Converged;
    TrajectoryClass analytic = TrajectoryClass::Converged; // from gamma + lambda*Delta
};

struct PhaseMap {
    std::vector<double> gammas;
    std::vector<double> lambda_deltas;
    std::vector<SweepCell> cells; // row-major, gamma outer

    const SweepCell& at(std::size_t i, std::size_t j) const { return cells[i * lambda_deltas.size() + j]; }

    std::size_t mismatches() const {
        std::size_t n = 0;
        for (const auto& c : cells) n += c.observed != c.analytic;
        return n;
    }
};

/// Iterates T_bad (r2 = 1, Delta = 1, lambda = lambda_delta) from q = 1 and
/// q = 0 for n_iter steps and classifies each cell by the observed rate.
inline PhaseMap run_threshold_sweep(const std::vector<double>& gamma_grid,
                                    const std::vector<double>& lambda_delta_grid, std::size_t n_iter) {
    if (n_iter == 0) throw DomainError("threshold sweep needs n_iter >= 1");
    for (double g : gamma_grid)
        if (!(g >= 0.0 && g <= 1.5)) throw DomainError("gamma grid must lie in [0, 1.5]");
    for (double l : lambda_delta_grid)
        if (!(l >= 0.0 && l <= 1.5)) throw DomainError("lambda*Delta grid must lie in [0, 1.5]");
    PhaseMap map{gamma_grid, lambda_delta_grid, {}};
    map.cells.reserve(gamma_grid.size() * lambda_delta_grid.size());
    for (double g : gamma_grid)
        for (double ld : lambda_delta_grid) {
            const BadOperatorParams p{g, ld, 2.0, 1.0};
            double q1 = 1.0, q2 = 0.0;
            for (std::size_t n = 0; n < n_iter; ++n) {
                q1 = apply_bad_operator(p, q1);
                q2 = apply_bad_operator(p, q2);
            }
            const double d = std::abs(q1 - q2);
            SweepCell cell{g, ld, 0.0, TrajectoryClass::Converged, classify_rate(bad_operator_factor(p))};
            if (!std::isfinite(d)) {
                cell.rate = std::numeric_limits<double>::infinity();
                cell.observed = TrajectoryClass::Diverged;
            } else if (d == 0.0) {
                cell.observed = TrajectoryClass::Converged;
            } else {
                cell.rate = std::exp(std::log(d) / static_cast<double>(n_iter));
                cell.observed = classify_rate(cell.rate);
            }
            map.cells.push_back(cell);
        }
    return map;
}

/// {0, step, 2 step, ...} with n points.
inline std::vector<double> uniform_grid(std::size_t n, double step) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<double>(i) * step;
    return g;
}

/// Default 50 x 50 map: gamma in {0, 0.02, ..., 0.98}, lambda*Delta in {0, 0.01, ..., 0.49}.
inline PhaseMap run_default_threshold_sweep(std::size_t n_iter = 200) {
    return run_threshold_sweep(uniform_grid(50, 0.02), uniform_grid(50, 0.01), n_iter);
}

inline nlohmann::json phase_map_to_json(const PhaseMap& map) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : map.cells)
        cells.push_back({{"gamma", c.gamma},
                         {"lambda_delta", c.lambda_delta},
                         {"rate", std::isfinite(c.rate) ? nlohmann::json(c.rate) : nlohmann::json("inf")},
                         {"observed", to_string(c.observed)},
                         {"analytic", to_string(c.analytic)}});
    return {{"gammas", map.gammas},
            {"lambda_deltas", map.lambda_deltas},
            {"mismatches", map.mismatches()},
            {"cells", cells}};
}

inline std::string phase_map_to_csv(const PhaseMap& map) {
    std::string out = "gamma,lambda_delta,rate,observed,analytic\n";
    for (const auto& c : map.cells) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%s,%s\n", c.gamma, c.lambda_delta, c.rate,
                      to_string(c.observed), to_string(c.analytic));
        out += buf;
    }
    return out;
}

// --- detection delay table ----------------------------------------------------

struct DelayRow {
    double L = 0.0;
    double r0 = 0.0;
    double delta = 0.0;
    double n_delta = 0.0;
    std::size_t ceil_n = 0;
    std::size_t empirical = 0;
};

struct DelayScenario {
    double L, r0, delta;
};

inline const std::vector<DelayScenario>& delay_scenarios() {
    static const std::vector<DelayScenario> rows = {
        {5.0, 1.0, 0.05}, {2.0, 1.0, 0.05}, {1.2, 1.0, 0.05}, {2.0, 10.0, 0.05}};
    return rows;
}

inline std::vector<DelayRow> run_delay_table(std::uint64_t seed = 0) {
    std::vector<DelayRow> table;
    std::uint64_t stream = 0;
    for (const auto& s : delay_scenarios()) {
        DelayRow row{s.L, s.r0, s.delta, detection_delay(s.L, s.r0, s.delta),
                     detection_steps(s.L, s.r0, s.delta), 0};
        row.empirical = empirical_detection_delay(s.L, s.r0, s.delta, derive_seed(seed, stream++)).steps;
        table.push_back(row);
    }
    return table;
}

inline nlohmann::json delay_table_to_json(const std::vector<DelayRow>& table) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : table)
        out.push_back({{"L", r.L},
                       {"r0", r.r0},
                       {"delta", r.delta},
                       {"n_delta", r.n_delta},
                       {"ceil_n_delta", r.ceil_n},
                       {"empirical", r.empirical}});
    return out;
}

inline std::string delay_table_to_csv(const std::vector<DelayRow>& table) {
    std::string out = "L,r0,delta,n_delta,ceil_n_delta,empirical\n";
    for (const auto& r : table) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%zu,%zu\n", r.L, r.r0, r.delta, r.n_delta,
                      r.ceil_n, r.empirical);
        out += buf;
    }
    return out;
}

} // namespace bapr::harness

#pragma once

// Finite tabular MDP primitives: Q-tables, per-regime models, and the
// max/sup-norm helpers every operator is built from.

#include "bapr/error.hpp"
#include "bapr/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace bapr {

/// Row-stochastic tolerance for transition kernels.
inline constexpr double kKernelTolerance = 1e-12;

/// Dense Q-table over (state, action), row-major by state. Immutable; every
/// entry is finite.
class QFunction {
public:
    QFunction(std::size_t states, std::size_t actions, std::vector<double> values)
        : states_(states), actions_(actions), values_(std::move(values)) {
        if (states_ == 0 || actions_ == 0)
            throw DimensionError("QFunction needs at least one state and one action");
        if (values_.size() != states_ * actions_)
            throw DimensionError("QFunction value count does not match S*A");
        for (double v : values_)
            if (!std::isfinite(v)) throw DomainError("QFunction entry is not finite");
    }

    static QFunction constant(std::size_t states, std::size_t actions, double c) {
        return QFunction(states, actions, std::vector<double>(states * actions, c));
    }

    static QFunction zeros(std::size_t states, std::size_t actions) {
        return constant(states, actions, 0.0);
    }

    /// Entries i.i.d. uniform in [lo, hi).
    static QFunction random(std::size_t states, std::size_t actions, Rng& rng, double lo = -10.0,
                            double hi = 10.0) {
        std::vector<double> v(states * actions);
        for (double& x : v) x = rng.uniform(lo, hi);
        return QFunction(states, actions, std::move(v));
    }

    std::size_t states() const noexcept { return states_; }
    std::size_t actions() const noexcept { return actions_; }
    double operator()(std::size_t s, std::size_t a) const { return values_[s * actions_ + a]; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> row(std::size_t s) const {
        return std::span<const double>(values_).subspan(s * actions_, actions_);
    }

    bool same_shape(const QFunction& other) const noexcept {
        return states_ == other.states_ && actions_ == other.actions_;
    }

    QFunction shifted(double c) const {
        std::vector<double> v = values_;
        for (double& x : v) x += c;
        return QFunction(states_, actions_, std::move(v));
    }

    friend bool operator==(const QFunction&, const QFunction&) = default;

private:
    std::size_t states_;
    std::size_t actions_;
    std::vector<double> values_;
};

/// One regime: reward R_m(s,a), kernel P_m(s'|s,a) and the frozen epistemic
/// penalty table. Plain data; validity is checked by validate_mode().
struct ModeModel {
    std::size_t states = 0;
    std::size_t actions = 0;
    std::vector<double> reward;    // S*A
    std::vector<double> kernel;    // S*A*S, row (s,a) contiguous
    std::vector<double> gamma_epi; // S*A

    double r(std::size_t s, std::size_t a) const { return reward[s * actions + a]; }
    double p(std::size_t s, std::size_t a, std::size_t next) const {
        return kernel[(s * actions + a) * states + next];
    }
    std::span<const double> kernel_row(std::size_t s, std::size_t a) const {
        return std::span<const double>(kernel).subspan((s * actions + a) * states, states);
    }
    double penalty(std::size_t s, std::size_t a) const { return gamma_epi[s * actions + a]; }

    friend bool operator==(const ModeModel&, const ModeModel&) = default;
};

struct OperatorParams {
    double gamma = 0.99;
    double lambda_epi = 1.0;
    double kappa = 0.0;

    void validate() const {
        if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("discount must lie in [0, 1)");
        if (!(lambda_epi >= 0.0) || !std::isfinite(lambda_epi))
            throw DomainError("lambda_epi must be finite and >= 0");
        if (!(kappa >= 0.0) || !std::isfinite(kappa))
            throw DomainError("kappa must be finite and >= 0");
    }
};

struct Segment {
    std::size_t mode = 0;
    std::size_t dwell = 1;
};

/// Scripted regime sequence: each segment holds one mode for `dwell` iterations.
class PiecewiseSchedule {
public:
    PiecewiseSchedule() = default;
    PiecewiseSchedule(std::vector<Segment> segments, std::size_t n_modes)
        : segments_(std::move(segments)) {
        if (segments_.empty()) throw DomainError("schedule needs at least one segment");
        for (const auto& seg : segments_) {
            if (seg.mode >= n_modes) throw DomainError("schedule references an unknown mode");
            if (seg.dwell == 0) throw DomainError("segment dwell must be >= 1");
        }
    }

    const std::vector<Segment>& segments() const noexcept { return segments_; }

    std::size_t total_iterations() const {
        std::size_t n = 0;
        for (const auto& seg : segments_) n += seg.dwell;
        return n;
    }

    /// First iteration of each segment.
    std::vector<std::size_t> segment_starts() const {
        std::vector<std::size_t> starts;
        std::size_t t = 0;
        for (const auto& seg : segments_) {
            starts.push_back(t);
            t += seg.dwell;
        }
        return starts;
    }

    std::size_t mode_at(std::size_t iter) const {
        std::size_t t = 0;
        for (const auto& seg : segments_) {
            if (iter < t + seg.dwell) return seg.mode;
            t += seg.dwell;
        }
        throw DomainError("iteration beyond the end of the schedule");
    }

private:
    std::vector<Segment> segments_;
};

/// V(s) = max_a Q(s,a).
inline std::vector<double> greedy_value(const QFunction& q) {
    std::vector<double> v(q.states());
    for (std::size_t s = 0; s < q.states(); ++s) {
        const auto row = q.row(s);
        v[s] = *std::max_element(row.begin(), row.end());
    }
    return v;
}

/// max_{s,a} |Q1(s,a) - Q2(s,a)|
inline double sup_dist(const QFunction& q1, const QFunction& q2) {
    if (!q1.same_shape(q2)) throw DimensionError("sup_dist: shape mismatch");
    double d = 0.0;
    const auto a = q1.values();
    const auto b = q2.values();
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

struct Violation {
    enum class Kind { Shape, NegativeProbability, RowSum, NegativePenalty, NonFinite };

    Kind kind;
    std::size_t state = 0;
    std::size_t action = 0;
    std::optional<std::size_t> next_state;
    double amount = 0.0; // offending value, or the row-sum deficit 1 - sum
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }

    std::string describe() const {
        std::ostringstream os;
        for (const auto& v : violations) os << v.message << '\n';
        return os.str();
    }
};

/// Checks nonnegative, row-stochastic kernels and nonnegative penalties.
/// Reports every violation with its location rather than stopping at the first.
inline ValidationReport validate_mode(const ModeModel& m) {
    ValidationReport report;
    auto add = [&](Violation::Kind kind, std::size_t s, std::size_t a,
                   std::optional<std::size_t> next, double amount, std::string msg) {
        report.violations.push_back(Violation{kind, s, a, next, amount, std::move(msg)});
    };
    const std::size_t S = m.states, A = m.actions;
    if (S == 0 || A == 0 || m.reward.size() != S * A || m.gamma_epi.size() != S * A ||
        m.kernel.size() != S * A * S) {
        add(Violation::Kind::Shape, 0, 0, std::nullopt, 0.0, "model tables do not match S, A");
        return report;
    }
    auto loc = [](std::size_t s, std::size_t a) {
        return "(s=" + std::to_string(s) + ", a=" + std::to_string(a) + ")";
    };
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            if (!std::isfinite(m.r(s, a)))
                add(Violation::Kind::NonFinite, s, a, std::nullopt, m.r(s, a),
                    "reward not finite at " + loc(s, a));
            const double pen = m.penalty(s, a);
            if (!std::isfinite(pen) || pen < 0.0)
                add(Violation::Kind::NegativePenalty, s, a, std::nullopt, pen,
                    "epistemic penalty negative or not finite at " + loc(s, a));
            double sum = 0.0;
            for (std::size_t n = 0; n < S; ++n) {
                const double p = m.p(s, a, n);
                if (!std::isfinite(p) || p < 0.0)
                    add(Violation::Kind::NegativeProbability, s, a, n, p,
                        "kernel entry " + std::to_string(p) + " at " + loc(s, a) +
                            " -> s'=" + std::to_string(n));
                sum += p;
            }
            if (!(std::abs(sum - 1.0) <= kKernelTolerance))
                add(Violation::Kind::RowSum, s, a, std::nullopt, 1.0 - sum,
                    "kernel row " + loc(s, a) + " sums to " + std::to_string(sum) +
                        " (deficit " + std::to_string(1.0 - sum) + ")");
        }
    }
    return report;
}

inline void require_valid(const ModeModel& m) {
    const auto report = validate_mode(m);
    if (!report.ok()) throw DomainError("invalid mode model:\n" + report.describe());
}

/// Random regime for tests and experiments. Kernel rows are uniform on the
/// simplex (normalized exponentials); penalties are uniform in [0, 0.1).
inline ModeModel make_random_mode(std::uint64_t seed, std::size_t S, std::size_t A,
                                  double reward_lo = 0.0, double reward_hi = 1.0) {
    if (S == 0 || A == 0) throw DimensionError("make_random_mode: S and A must be >= 1");
    Rng rng(seed);
    ModeModel m;
    m.states = S;
    m.actions = A;
    m.reward.resize(S * A);
    m.gamma_epi.resize(S * A);
    m.kernel.resize(S * A * S);
    for (double& r : m.reward) r = rng.uniform(reward_lo, reward_hi);
    for (std::size_t row = 0; row < S * A; ++row) {
        double* p = m.kernel.data() + row * S;
        double sum = 0.0;
        for (std::size_t n = 0; n < S; ++n) sum += (p[n] = rng.exponential());
        for (std::size_t n = 0; n < S; ++n) p[n] /= sum;
    }
    for (double& g : m.gamma_epi) g = rng.uniform(0.0, 0.1);
    return m;
}

/// Same kernel and penalties, every reward shifted by c.
inline ModeModel with_reward_shift(ModeModel m, double c) {
    for (double& r : m.reward) r += c;
    return m;
}

} // namespace bapr

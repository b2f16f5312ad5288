#include "bapr/operators.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bapr;

namespace {

// Textbook backup written out with explicit loops.
std::vector<double> naive_backup(const ModeModel& m, const OperatorParams& p, const QFunction& q) {
    std::vector<double> out;
    for (std::size_t s = 0; s < m.states; ++s)
        for (std::size_t a = 0; a < m.actions; ++a) {
            double ev = 0.0;
            for (std::size_t n = 0; n < m.states; ++n) {
                double vmax = q(n, 0);
                for (std::size_t b = 1; b < m.actions; ++b)
                    if (q(n, b) > vmax) vmax = q(n, b);
                ev += m.p(s, a, n) * vmax;
            }
            out.push_back(m.r(s, a) + p.gamma * ev - p.gamma * p.lambda_epi * m.penalty(s, a) -
                          p.gamma * p.kappa);
        }
    return out;
}

ModeModel one_state(double reward) {
    return ModeModel{1, 1, {reward}, {1.0}, {0.0}};
}

void expect_close(const QFunction& a, const QFunction& b, double tol) {
    ASSERT_TRUE(a.same_shape(b));
    for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], tol);
}

std::vector<ModeModel> random_modes(std::uint64_t seed, std::size_t n, std::size_t S, std::size_t A) {
    std::vector<ModeModel> v;
    for (std::size_t k = 0; k < n; ++k) v.push_back(make_random_mode(derive_seed(seed, k), S, A));
    return v;
}

} // namespace

TEST(ModeBelief, Validation) {
    EXPECT_THROW(ModeBelief({}), DomainError);
    EXPECT_THROW(ModeBelief({0.5, 0.4}), DomainError);
    EXPECT_THROW(ModeBelief({1.5, -0.5}), DomainError);
    EXPECT_NO_THROW(ModeBelief({0.25, 0.75}));
    Rng rng(1);
    const auto b = ModeBelief::random(5, rng);
    double sum = 0.0;
    for (double w : b.weights()) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(ModeOperator, OneStepBackup) {
    const OperatorParams p{0.5, 0.0, 0.0};
    EXPECT_EQ(apply_mode_operator(one_state(1.0), p, QFunction::zeros(1, 1))(0, 0), 1.0);
}

TEST(ModeOperator, ShiftDiscounts) {
    const auto m = make_random_mode(5, 4, 3);
    const OperatorParams p{0.9, 1.0, 0.2};
    Rng rng(2);
    const auto q = QFunction::random(4, 3, rng);
    expect_close(apply_mode_operator(m, p, q.shifted(3.0)), apply_mode_operator(m, p, q).shifted(2.7), 1e-12);
}

TEST(ModeOperator, MatchesNaiveLoops) {
    const auto m = make_random_mode(17, 4, 3);
    const OperatorParams p{0.95, 0.7, 0.3};
    Rng rng(4);
    for (const auto& q : {QFunction::zeros(4, 3), QFunction::random(4, 3, rng)}) {
        const auto got = apply_mode_operator(m, p, q);
        const auto ref = naive_backup(m, p, q);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got.values()[i], ref[i], 1e-12);
    }
}

TEST(ModeOperator, ShapeMismatch) {
    EXPECT_THROW(apply_mode_operator(make_random_mode(1, 3, 2), {}, QFunction::zeros(3, 3)), DimensionError);
}

TEST(BaprOperator, PointMassIsModeOperator) {
    const auto models = random_modes(9, 3, 5, 2);
    const OperatorParams p{0.9, 1.0, 0.0};
    Rng rng(5);
    const auto q = QFunction::random(5, 2, rng);
    EXPECT_EQ(apply_bapr_operator(models, ModeBelief::point_mass(3, 1), p, q), apply_mode_operator(models[1], p, q));
}

TEST(BaprOperator, IdenticalModes) {
    const auto m = make_random_mode(3, 4, 2);
    const std::vector<ModeModel> models{m, m};
    const OperatorParams p{0.8, 0.5, 0.1};
    Rng rng(6);
    const auto q = QFunction::random(4, 2, rng);
    expect_close(apply_bapr_operator(models, ModeBelief({0.3, 0.7}), p, q), apply_mode_operator(m, p, q), 1e-12);
}

TEST(BaprOperator, WeightedSumOfNaiveBackups) {
    const auto models = random_modes(21, 3, 4, 3);
    const OperatorParams p{0.9, 1.0, 0.05};
    Rng rng(8);
    const auto q = QFunction::random(4, 3, rng);
    const auto got = apply_bapr_operator(models, ModeBelief::uniform(3), p, q);
    std::vector<double> ref(12, 0.0);
    for (const auto& m : models) {
        const auto b = naive_backup(m, p, q);
        for (std::size_t i = 0; i < 12; ++i) ref[i] += b[i] / 3.0;
    }
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(got.values()[i], ref[i], 1e-12);
}

TEST(BaprOperator, CountMismatch) {
    const auto models = random_modes(1, 2, 3, 2);
    EXPECT_THROW(apply_bapr_operator(models, ModeBelief::uniform(3), {}, QFunction::zeros(3, 2)), DimensionError);
}

TEST(BaprOperator, ContractionMonotonicityDiscounting) {
    Rng rng(31);
    for (double gamma : {0.5, 0.9, 0.99}) {
        for (int trial = 0; trial < 10; ++trial) {
            const auto models = random_modes(rng.next(), 1 + rng.index(4), 2 + rng.index(5), 1 + rng.index(4));
            const std::size_t S = models[0].states, A = models[0].actions;
            const BaprOperator op{models, ModeBelief::random(models.size(), rng), {gamma, 1.0, 0.1}};
            EXPECT_LE(estimate_lipschitz(op, S, A, 100, rng.next()), gamma + 1e-10);

            const auto q1 = QFunction::random(S, A, rng);
            std::vector<double> hi(q1.values().begin(), q1.values().end());
            for (double& x : hi) x += rng.uniform(0.0, 2.0);
            const auto t1 = op(q1), t2 = op(QFunction(S, A, hi));
            for (std::size_t i = 0; i < S * A; ++i) EXPECT_LE(t1.values()[i], t2.values()[i] + 1e-12);

            const double c = rng.uniform(-10.0, 10.0);
            expect_close(op(q1.shifted(c)), t1.shifted(gamma * c), 1e-11);
        }
    }
}

TEST(BaprOperator, UnnormalizedWeightsBreakDiscounting) {
    const auto models = random_modes(4, 2, 3, 2);
    const OperatorParams p{0.9, 1.0, 0.0};
    const std::vector<double> w{0.45, 0.45};
    const auto q = QFunction::zeros(3, 2);
    const double c = 10.0;
    const auto lhs = detail::mix_mode_operators(models, w, p, q.shifted(c));
    const auto rhs = detail::mix_mode_operators(models, w, p, q).shifted(p.gamma * c);
    // Off by (sum w - 1) * gamma * c everywhere.
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(lhs.values()[i] - rhs.values()[i], -0.9, 1e-12);
}

TEST(BadOperator, PublishedInstanceExpands) {
    const BadOperatorParams p{0.99, 0.001, 50.0, 0.0};
    EXPECT_NEAR(bad_operator_factor(p), 1.04, 1e-12);
    EXPECT_EQ(classify_factor(bad_operator_factor(p)), Stability::Expansion);
    EXPECT_NEAR(std::abs(apply_bad_operator(p, 1.0) - apply_bad_operator(p, 0.0)), 1.04, 1e-12);
}

TEST(BadOperator, FrozenLimitContracts) {
    const BadOperatorParams p{0.99, 0.0, 50.0, 2.0};
    EXPECT_EQ(apply_bad_operator(p, 3.0), 0.99 * 3.0 + 2.0);
    EXPECT_EQ(classify_factor(bad_operator_factor(p)), Stability::Contraction);
}

TEST(BadOperator, BelowThresholdFixedPoint) {
    const BadOperatorParams p{0.9, 0.01, 6.0, 1.0}; // Delta = 5, factor 0.95
    double q = 100.0;
    for (int i = 0; i < 2000; ++i) q = apply_bad_operator(p, q);
    EXPECT_NEAR(q, 1.0 / (1.0 - 0.95), 1e-9);
}

TEST(BadOperator, ExactDistanceScaling) {
    Rng rng(12);
    for (int i = 0; i < 1000; ++i) {
        const double r2 = rng.uniform(-5, 5);
        const BadOperatorParams p{rng.uniform(0, 1), rng.uniform(0, 0.05), r2 + rng.uniform(0, 20), r2};
        const double a = rng.uniform(-50, 50), b = rng.uniform(-50, 50);
        const double lhs = std::abs(apply_bad_operator(p, a) - apply_bad_operator(p, b));
        EXPECT_NEAR(lhs, bad_operator_factor(p) * std::abs(a - b), 1e-9 * (1 + std::abs(a - b)));
    }
}

TEST(BadOperator, ClassificationBoundaryIsTheLine) {
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j <= 50; ++j) {
            const double g = i * 0.02, ld = j * 0.01;
            const auto cls = classify_factor(bad_operator_factor({g, ld, 1.0, 0.0}), 1e-12);
            if (g + ld < 1.0 - 1e-9) {
                EXPECT_EQ(cls, Stability::Contraction);
            }
            if (g + ld > 1.0 + 1e-9) {
                EXPECT_EQ(cls, Stability::Expansion);
            }
        }
    EXPECT_EQ(classify_factor(bad_operator_factor({0.5, 0.5, 1.0, 0.0})), Stability::Nonexpansive);
}

TEST(FixedPoint, GeometricSeries) {
    auto op = [](const QFunction& q) { return apply_mode_operator(one_state(1.0), {0.5, 0.0, 0.0}, q); };
    const auto res = solve_fixed_point(op, QFunction::zeros(1, 1), 1e-12);
    ASSERT_TRUE(res.converged);
    EXPECT_NEAR(res.q_star(0, 0), 2.0, 1e-11);
}

TEST(FixedPoint, ExpansiveOperatorFlagged) {
    const auto res = solve_fixed_point(bad_operator_map({0.99, 0.001, 50.0, 0.0}), QFunction::constant(1, 1, 1.0),
                                       1e-10, 500);
    EXPECT_FALSE(res.converged);
    EXPECT_GT(res.final_residual, 0.04);
}

TEST(FixedPoint, MatchesLongValueIteration) {
    const auto m = make_random_mode(6, 6, 3);
    const OperatorParams p{0.9, 1.0, 0.0};
    const auto q_star = solve_mode_fixed_point(m, p, 1e-12);
    std::vector<double> q(18, 0.0);
    for (int it = 0; it < 10000; ++it) q = naive_backup(m, p, QFunction(6, 3, q));
    for (std::size_t i = 0; i < 18; ++i) EXPECT_NEAR(q_star.values()[i], q[i], 1e-8);
}

TEST(FixedPoint, APosterioriBound) {
    const auto models = random_modes(14, 2, 5, 2);
    const BaprOperator op{models, ModeBelief({0.4, 0.6}), {0.9, 1.0, 0.0}};
    const auto coarse = solve_fixed_point(op, QFunction::zeros(5, 2), 1e-4);
    const auto fine = solve_fixed_point(op, QFunction::zeros(5, 2), 1e-13);
    ASSERT_TRUE(coarse.converged && fine.converged);
    EXPECT_LE(sup_dist(coarse.q_star, fine.q_star), a_posteriori_error(coarse.final_residual, 0.9) + 1e-12);
}

TEST(Lipschitz, KnownOperators) {
    auto identity = [](const QFunction& q) { return q; };
    EXPECT_NEAR(estimate_lipschitz(identity, 3, 2, 20, 1), 1.0, 1e-12);
    EXPECT_NEAR(estimate_lipschitz(bad_operator_map({0.99, 0.001, 50.0, 0.0}), 1, 1, 50, 2), 1.04, 1e-12);
    const BaprOperator op{random_modes(3, 3, 4, 2), ModeBelief({0.2, 0.3, 0.5}), {0.9, 1.0, 0.0}};
    EXPECT_LE(estimate_lipschitz(op, 4, 2, 500, 3), 0.9 + 1e-10);
    EXPECT_EQ(estimate_lipschitz(op, 4, 2, 30, 9), estimate_lipschitz(op, 4, 2, 30, 9));
}

TEST(Perturbation, IdenticalRegimes) {
    const auto m = make_random_mode(8, 4, 2);
    const auto r = regime_perturbation(m, m, {0.9, 1.0, 0.0});
    EXPECT_EQ(r.delta_r, 0.0);
    EXPECT_EQ(r.actual_gap, 0.0);
}

TEST(Perturbation, UniformShiftIsTight) {
    const auto m = make_random_mode(8, 4, 2);
    const double c = 0.3, gamma = 0.9;
    const auto r = regime_perturbation(m, with_reward_shift(m, c), {gamma, 1.0, 0.0}, 1e-13);
    EXPECT_NEAR(r.delta_r, c, 1e-12);
    EXPECT_NEAR(r.bound, c / (1 - gamma), 1e-10);
    EXPECT_NEAR(r.actual_gap, c / (1 - gamma), 1e-9);
}

TEST(Perturbation, RandomPairsRespectBound) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto r = regime_perturbation(make_random_mode(derive_seed(seed, 0), 4, 2),
                                           make_random_mode(derive_seed(seed, 1), 4, 2), {0.95, 1.0, 0.0}, 1e-12);
        EXPECT_LE(r.actual_gap, r.bound + 1e-9) << seed;
    }
}

TEST(Projection, SingletonsAndFullBlock) {
    Rng rng(15);
    const auto q = QFunction::random(4, 2, rng);
    EXPECT_EQ(project(q, StatePartition::singletons(4)), q);
    const auto full = project(q, StatePartition::single_block(4));
    for (std::size_t a = 0; a < 2; ++a) {
        const double mean = (q(0, a) + q(1, a) + q(2, a) + q(3, a)) / 4.0;
        for (std::size_t s = 0; s < 4; ++s) EXPECT_NEAR(full(s, a), mean, 1e-12);
    }
}

TEST(Projection, InvalidPartitions) {
    EXPECT_THROW(StatePartition({{0, 1}, {1, 2}}, 3), DomainError);
    EXPECT_THROW(StatePartition({{0}, {2}}, 3), DomainError);
    EXPECT_THROW(StatePartition({{0, 3}}, 3), DomainError);
    EXPECT_THROW(StatePartition({{0, 1, 2}, {}}, 3), DomainError);
    EXPECT_THROW(project(QFunction::zeros(2, 1), StatePartition::singletons(3)), DimensionError);
}

TEST(Projection, NonexpansiveAndIdempotent) {
    Rng rng(16);
    for (int i = 0; i < 200; ++i) {
        const auto part = StatePartition::random(7, 1 + rng.index(7), rng);
        const auto q1 = QFunction::random(7, 3, rng), q2 = QFunction::random(7, 3, rng);
        EXPECT_LE(sup_dist(project(q1, part), project(q2, part)), sup_dist(q1, q2) + 1e-12);
        expect_close(project(project(q1, part), part), project(q1, part), 1e-12);
    }
}

TEST(Projection, ProjectedFixedPointGap) {
    const auto models = random_modes(40, 2, 8, 2);
    const OperatorParams p{0.9, 1.0, 0.0};
    const ModeBelief b({0.5, 0.5});
    const StatePartition part({{0, 1, 2}, {3, 4}, {5, 6, 7}}, 8);
    auto pt = [&](const QFunction& q) { return project(apply_bapr_operator(models, b, p, q), part); };
    EXPECT_LE(estimate_lipschitz(pt, 8, 2, 200, 4), 0.9 + 1e-10);
    const auto q_star = solve_bapr_fixed_point(models, b, p, 1e-13);
    const auto q_tilde = solve_fixed_point(pt, QFunction::zeros(8, 2), 1e-13).q_star;
    EXPECT_LE(sup_dist(q_tilde, q_star), projection_error(q_star, part) / (1 - 0.9) + 1e-9);
}

TEST(NoisyOperator, ZeroSigmaAndBound) {
    const auto m = make_random_mode(2, 3, 2);
    auto op = [&](const QFunction& q) { return apply_mode_operator(m, {0.9, 1.0, 0.0}, q); };
    Rng rng(3);
    const auto q = QFunction::random(3, 2, rng);
    EXPECT_EQ(apply_noisy_operator(op, 0.0, 5, q), op(q));
    for (std::uint64_t seed = 0; seed < 100; ++seed)
        EXPECT_LE(sup_dist(apply_noisy_operator(op, 0.25, seed, q), op(q)), 0.25);
    EXPECT_EQ(apply_noisy_operator(op, 0.25, 7, q), apply_noisy_operator(op, 0.25, 7, q));
    EXPECT_THROW(apply_noisy_operator(op, -1.0, 0, q), DomainError);
}

TEST(NoisyOperator, TrackingBound) {
    const double gamma = 0.9, sigma = 0.1;
    const auto m = make_random_mode(13, 5, 3);
    auto op = [&](const QFunction& q) { return apply_mode_operator(m, {gamma, 1.0, 0.0}, q); };
    const auto q_star = solve_mode_fixed_point(m, {gamma, 1.0, 0.0}, 1e-13);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        QFunction q = QFunction::zeros(5, 3);
        const double e0 = sup_dist(q, q_star);
        double gn = 1.0;
        for (int n = 1; n <= 200; ++n) {
            q = apply_noisy_operator(op, sigma, derive_seed(seed, n), q);
            gn *= gamma;
            ASSERT_LE(sup_dist(q, q_star), gn * e0 + sigma / (1 - gamma) + 1e-9) << seed << " " << n;
        }
    }
}

TEST(CombinedBound, ProjectionPlusNoise) {
    const double gamma = 0.9, sigma = 0.05;
    const auto models = random_modes(50, 2, 6, 2);
    const ModeBelief b({0.7, 0.3});
    const OperatorParams p{gamma, 1.0, 0.0};
    const StatePartition part({{0, 1}, {2, 3}, {4, 5}}, 6);
    const auto q_star = solve_bapr_fixed_point(models, b, p, 1e-13);
    const double eps = projection_error(q_star, part);
    auto pt = [&](const QFunction& q) { return project(apply_bapr_operator(models, b, p, q), part); };
    QFunction q = QFunction::constant(6, 2, 20.0);
    const double e0 = sup_dist(q, q_star);
    double gn = 1.0;
    for (int n = 1; n <= 300; ++n) {
        q = apply_noisy_operator(pt, sigma, derive_seed(77, n), q);
        gn *= gamma;
        ASSERT_LE(sup_dist(q, q_star), gn * e0 + (eps + sigma) / (1 - gamma) + 1e-9) << n;
    }
}

TEST(SharedCritic, RoundTripAndDualPath) {
    Rng rng(19);
    std::vector<QFunction> per_mode;
    for (int m = 0; m < 3; ++m) per_mode.push_back(QFunction::random(4, 2, rng));
    const auto shared = shared_critic_from_modes(per_mode);
    for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(shared.extract(m), per_mode[m]);

    const auto one = shared_critic_from_modes(std::vector<QFunction>{per_mode[0]});
    EXPECT_EQ(one.extract(0), per_mode[0]);

    const auto models = random_modes(60, 3, 4, 2);
    const ModeBelief b({0.2, 0.5, 0.3});
    const OperatorParams p{0.9, 1.0, 0.1};
    std::vector<double> ref(8, 0.0);
    for (std::size_t m = 0; m < 3; ++m) {
        const auto t = apply_mode_operator(models[m], p, per_mode[m]);
        for (std::size_t i = 0; i < 8; ++i) ref[i] += b[m] * t.values()[i];
    }
    const auto got = apply_bapr_shared(models, b, p, shared);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got.values()[i], ref[i], 1e-12);

    per_mode.push_back(QFunction::zeros(3, 2));
    EXPECT_THROW(shared_critic_from_modes(per_mode), DimensionError);
}

TEST(BeliefGap, ZeroForSameBelief) {
    const auto models = random_modes(70, 2, 3, 2);
    const ModeBelief b({0.5, 0.5});
    EXPECT_EQ(belief_gap(models, b, b, {0.9, 1.0, 0.0}), 0.0);
    EXPECT_GT(belief_gap(models, b, ModeBelief::point_mass(2, 0), {0.9, 1.0, 0.0}), 0.0);
}

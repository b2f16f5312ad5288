#pragma once

// Bayesian online change detection over run-lengths: the growing-variance
// Gaussian surprise likelihood, the growth/change-point recursion truncated
// at h_max, a joint (run-length x regime cluster) belief fed by an online
// k-means, and the detection-delay calculus for L-separable regimes.

#include "bapr/error.hpp"
#include "bapr/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace bapr {

inline constexpr double kSimplexTolerance = 1e-12;
/// Normalizers at or below this are treated as zero evidence.
inline constexpr double kNormalizerFloor = 1e-300;

struct BOCDParams {
    std::size_t h_max = 20;
    double hazard = 0.05;
    double sigma0_sq = 0.1;
    double sigma_g = 0.05;

    void validate() const {
        if (h_max < 2) throw DomainError("h_max must be >= 2");
        if (!(hazard > 0.0 && hazard < 1.0)) throw DomainError("hazard must lie in (0, 1)");
        if (!(sigma0_sq > 0.0) || !std::isfinite(sigma0_sq))
            throw DomainError("sigma0_sq must be > 0");
        if (!(sigma_g >= 0.0) || !std::isfinite(sigma_g)) throw DomainError("sigma_g must be >= 0");
    }
};

namespace detail {

inline void check_simplex(std::span<const double> p, const char* what) {
    if (p.empty()) throw DomainError(std::string(what) + ": empty distribution");
    double sum = 0.0;
    for (double x : p) {
        if (!std::isfinite(x) || x < 0.0)
            throw DomainError(std::string(what) + ": negative or non-finite probability");
        sum += x;
    }
    if (std::abs(sum - 1.0) > kSimplexTolerance)
        throw DomainError(std::string(what) + ": probabilities do not sum to 1");
}

/// Divides by the sum; throws DegenerateNormalizer when the sum is at or
/// below the floor.
inline void normalize_or_throw(std::vector<double>& v) {
    double z = 0.0;
    for (double x : v) z += x;
    if (!(z > kNormalizerFloor) || !std::isfinite(z))
        throw DegenerateNormalizer("belief normalizer is zero: evidence rules out every hypothesis");
    for (double& x : v) x /= z;
}

} // namespace detail

/// Posterior over run-lengths 0..h_max-1.
class RunLengthBelief {
public:
    explicit RunLengthBelief(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.size() < 2) throw DomainError("run-length belief needs h_max >= 2");
        detail::check_simplex(probs_, "run-length belief");
    }

    static RunLengthBelief uniform(std::size_t h_max) {
        return RunLengthBelief(std::vector<double>(h_max, 1.0 / static_cast<double>(h_max)));
    }

    static RunLengthBelief point_mass(std::size_t h_max, std::size_t h) {
        std::vector<double> p(h_max, 0.0);
        p.at(h) = 1.0;
        return RunLengthBelief(std::move(p));
    }

    std::size_t h_max() const noexcept { return probs_.size(); }
    std::span<const double> probs() const noexcept { return probs_; }
    double operator[](std::size_t h) const { return probs_[h]; }

private:
    std::vector<double> probs_;
};

/// Joint posterior b(h, z), row-major by run-length.
class JointBelief {
public:
    JointBelief(std::size_t h_max, std::size_t n_clusters, std::vector<double> probs)
        : h_max_(h_max), n_clusters_(n_clusters), probs_(std::move(probs)) {
        if (h_max_ < 2 || n_clusters_ == 0) throw DomainError("joint belief needs h_max >= 2, |Z| >= 1");
        if (probs_.size() != h_max_ * n_clusters_) throw DimensionError("joint belief size mismatch");
        detail::check_simplex(probs_, "joint belief");
    }

    static JointBelief uniform(std::size_t h_max, std::size_t n_clusters) {
        const double w = 1.0 / static_cast<double>(h_max * n_clusters);
        return JointBelief(h_max, n_clusters, std::vector<double>(h_max * n_clusters, w));
    }

    std::size_t h_max() const noexcept { return h_max_; }
    std::size_t n_clusters() const noexcept { return n_clusters_; }
    std::span<const double> probs() const noexcept { return probs_; }
    double operator()(std::size_t h, std::size_t z) const { return probs_[h * n_clusters_ + z]; }

    /// rho(h) = sum_z b(h, z)
    std::vector<double> marginal_h() const {
        std::vector<double> rho(h_max_, 0.0);
        for (std::size_t h = 0; h < h_max_; ++h)
            for (std::size_t z = 0; z < n_clusters_; ++z) rho[h] += (*this)(h, z);
        return rho;
    }

    /// mu(z) = sum_h b(h, z)
    std::vector<double> marginal_z() const {
        std::vector<double> mu(n_clusters_, 0.0);
        for (std::size_t h = 0; h < h_max_; ++h)
            for (std::size_t z = 0; z < n_clusters_; ++z) mu[z] += (*this)(h, z);
        return mu;
    }

private:
    std::size_t h_max_;
    std::size_t n_clusters_;
    std::vector<double> probs_;
};

/// p(xi | h): zero-mean Gaussian density with variance sigma0^2 + sigma_g * h.
inline double likelihood(double xi, std::size_t h, const BOCDParams& params) {
    if (h >= params.h_max) throw DomainError("run-length outside [0, h_max)");
    const double var = params.sigma0_sq + params.sigma_g * static_cast<double>(h);
    return std::exp(-xi * xi / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// One step of the run-length recursion:
///   rho'(h) = rho(h-1) p(xi|h-1) (1 - H)        for h > 0
///   rho'(0) = H * sum_h rho(h) p(xi|h)
/// then normalized. Growth out of the last bin stays in the last bin.
inline RunLengthBelief bocd_step(const RunLengthBelief& belief, double xi, const BOCDParams& params) {
    if (belief.h_max() != params.h_max) throw DimensionError("belief length differs from h_max");
    const std::size_t H = params.h_max;
    std::vector<double> next(H, 0.0);
    double evidence = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
        const double joint = belief[h] * likelihood(xi, h, params);
        evidence += joint;
        next[std::min(h + 1, H - 1)] += joint * (1.0 - params.hazard);
    }
    next[0] = params.hazard * evidence;
    detail::normalize_or_throw(next);
    return RunLengthBelief(std::move(next));
}

/// h_bar = sum_h h * rho(h)
inline double expected_run_length(const RunLengthBelief& belief) {
    double m = 0.0;
    for (std::size_t h = 0; h < belief.h_max(); ++h) m += static_cast<double>(h) * belief[h];
    return m;
}

inline double belief_entropy(std::span<const double> probs) {
    double e = 0.0;
    for (double p : probs)
        if (p > 0.0) e -= p * std::log(p);
    return e;
}

inline double belief_entropy(const RunLengthBelief& belief) { return belief_entropy(belief.probs()); }

/// rho'(h) = rho(h) L(h) / Z on any finite hypothesis set.
inline std::vector<double> bayes_update(std::span<const double> prior, std::span<const double> lik) {
    if (prior.size() != lik.size()) throw DimensionError("prior and likelihood lengths differ");
    std::vector<double> post(prior.size());
    for (std::size_t i = 0; i < prior.size(); ++i) {
        if (!(lik[i] >= 0.0) || !std::isfinite(lik[i]))
            throw DomainError("likelihood must be finite and >= 0");
        post[i] = prior[i] * lik[i];
    }
    detail::normalize_or_throw(post);
    return post;
}

inline RunLengthBelief bayes_update(const RunLengthBelief& belief, std::span<const double> lik) {
    return RunLengthBelief(bayes_update(belief.probs(), lik));
}

// --- detection delay ----------------------------------------------------------

/// PR(n) = L^(2n) / r0
inline double posterior_ratio(std::size_t n, double L, double r0) {
    if (!(L > 1.0) || !(r0 > 0.0)) throw DomainError("posterior_ratio needs L > 1, r0 > 0");
    return std::pow(L, 2.0 * static_cast<double>(n)) / r0;
}

/// n_delta = log(r0 / delta) / (2 log L), the real-valued delay.
inline double detection_delay(double L, double r0, double delta) {
    if (!(L > 1.0) || !(r0 > 0.0) || !(delta > 0.0 && delta < 1.0))
        throw DomainError("detection_delay needs L > 1, r0 > 0, delta in (0, 1)");
    return std::log(r0 / delta) / (2.0 * std::log(L));
}

/// Smallest integer n >= 0 with PR(n) >= 1/delta.
inline std::size_t detection_steps(double L, double r0, double delta) {
    const double n = detection_delay(L, r0, delta);
    return n <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(n));
}

struct DelayRun {
    std::size_t steps = 0;       // first step whose posterior ratio reaches 1/delta
    double final_ratio = 0.0;    // posterior ratio at that step
    double min_step_ratio = 0.0; // smallest per-step likelihood ratio applied
};

/// Synthetic post-switch stream against two run-length hypotheses: the stale
/// one (h = 0, tight variance) and the fresh one (h = h_max - 1, loose
/// variance). Each step carries two surprise observations, each drawn so its
/// likelihood ratio p(xi|fresh)/p(xi|stale) is at least L; the prior ratio
/// stale/fresh is r0. The posterior is tracked with bayes_update() and the
/// variance-growth likelihood() until it reaches 1/delta.
inline DelayRun empirical_detection_delay(double L, double r0, double delta, std::uint64_t seed,
                                          const BOCDParams& params = {},
                                          std::size_t max_steps = 10'000) {
    if (!(L > 1.0) || !(r0 > 0.0) || !(delta > 0.0 && delta < 1.0))
        throw DomainError("empirical_detection_delay needs L > 1, r0 > 0, delta in (0, 1)");
    const std::size_t h_stale = 0, h_fresh = params.h_max - 1;
    const double v0 = params.sigma0_sq;
    const double v1 = params.sigma0_sq + params.sigma_g * static_cast<double>(h_fresh);
    if (!(v1 > v0)) throw DomainError("hypotheses are indistinguishable (sigma_g = 0)");
    // log LR(xi) = xi^2 (1/v0 - 1/v1) / 2 - log(v1/v0) / 2; invert for a target log ratio
    auto xi_for = [&](double log_ratio) {
        return std::sqrt(2.0 * (log_ratio + 0.5 * std::log(v1 / v0)) / (1.0 / v0 - 1.0 / v1));
    };

    Rng rng(seed);
    std::vector<double> belief = {r0 / (1.0 + r0), 1.0 / (1.0 + r0)};
    DelayRun run;
    run.min_step_ratio = std::numeric_limits<double>::infinity();
    const double target = 1.0 / delta;
    for (std::size_t n = 0; n <= max_steps; ++n) {
        run.final_ratio = belief[1] / belief[0];
        if (run.final_ratio >= target) {
            run.steps = n;
            return run;
        }
        double step_ratio = 1.0;
        for (int obs = 0; obs < 2; ++obs) {
            // log ratio drawn in [log L, 1.001 log L]: just above the separability floor
            const double xi = xi_for(std::log(L) * (1.0 + 1e-9 + rng.uniform(0.0, 1e-3)));
            const std::vector<double> lik = {likelihood(xi, h_stale, params),
                                             likelihood(xi, h_fresh, params)};
            step_ratio *= lik[1] / lik[0];
            belief = bayes_update(belief, lik);
        }
        run.min_step_ratio = std::min(run.min_step_ratio, step_ratio);
    }
    throw ConvergenceError("synthetic detection stream never reached the target confidence");
}

// --- regime clusters ----------------------------------------------------------

/// Online k-means state. Clusters with count 0 are unseeded: the next signal
/// that finds an unseeded cluster claims the lowest-index one.
class ClusterState {
public:
    ClusterState(std::size_t n_clusters, std::size_t dim)
        : n_(n_clusters), dim_(dim), centroids_(n_clusters * dim, 0.0), counts_(n_clusters, 0) {
        if (n_ == 0 || dim_ == 0) throw DomainError("cluster state needs >= 1 cluster and dim >= 1");
    }

    ClusterState(std::size_t n_clusters, std::size_t dim, std::vector<double> centroids,
                 std::vector<std::size_t> counts)
        : n_(n_clusters), dim_(dim), centroids_(std::move(centroids)), counts_(std::move(counts)) {
        if (n_ == 0 || dim_ == 0) throw DomainError("cluster state needs >= 1 cluster and dim >= 1");
        if (centroids_.size() != n_ * dim_ || counts_.size() != n_)
            throw DimensionError("cluster state size mismatch");
        for (double c : centroids_)
            if (!std::isfinite(c)) throw DomainError("centroid is not finite");
    }

    std::size_t n_clusters() const noexcept { return n_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const double> centroid(std::size_t k) const {
        return std::span<const double>(centroids_).subspan(k * dim_, dim_);
    }
    std::size_t count(std::size_t k) const { return counts_[k]; }

    friend std::pair<std::size_t, ClusterState> cluster_assign(std::span<const double> signal,
                                                               ClusterState clusters);

private:
    std::size_t n_, dim_;
    std::vector<double> centroids_;
    std::vector<std::size_t> counts_;
};

/// Nearest centroid in Euclidean distance (ties to the lowest index), then an
/// incremental-mean update of that centroid.
inline std::pair<std::size_t, ClusterState> cluster_assign(std::span<const double> signal,
                                                           ClusterState clusters) {
    if (signal.size() != clusters.dim_) throw DimensionError("signal dimension differs from centroids");
    for (double x : signal)
        if (!std::isfinite(x)) throw DomainError("signal is not finite");
    std::size_t best = clusters.n_;
    for (std::size_t k = 0; k < clusters.n_; ++k)
        if (clusters.counts_[k] == 0) {
            best = k;
            break;
        }
    if (best == clusters.n_) {
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < clusters.n_; ++k) {
            double d = 0.0;
            for (std::size_t i = 0; i < clusters.dim_; ++i) {
                const double diff = signal[i] - clusters.centroids_[k * clusters.dim_ + i];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
    }
    const double n = static_cast<double>(++clusters.counts_[best]);
    for (std::size_t i = 0; i < clusters.dim_; ++i) {
        double& c = clusters.centroids_[best * clusters.dim_ + i];
        c += (signal[i] - c) / n;
    }
    return {best, std::move(clusters)};
}

/// Joint recursion: each cluster column grows as in bocd_step; the total
/// change-point mass goes to row 0 with weight `stickiness` on z_now and the
/// rest spread uniformly over the other clusters (all of it to z_now when
/// |Z| = 1). The run-length marginal therefore follows bocd_step exactly.
inline JointBelief joint_step(const JointBelief& joint, double xi, std::size_t z_now,
                              const BOCDParams& params, double stickiness) {
    if (joint.h_max() != params.h_max) throw DimensionError("joint belief length differs from h_max");
    const std::size_t H = joint.h_max(), Z = joint.n_clusters();
    if (z_now >= Z) throw DomainError("current cluster index out of range");
    if (!(stickiness > 0.0 && stickiness <= 1.0)) throw DomainError("stickiness must lie in (0, 1]");
    std::vector<double> next(H * Z, 0.0);
    double evidence = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
        const double lik = likelihood(xi, h, params);
        const std::size_t to = std::min(h + 1, H - 1);
        for (std::size_t z = 0; z < Z; ++z) {
            const double mass = joint(h, z) * lik;
            evidence += mass;
            next[to * Z + z] += mass * (1.0 - params.hazard);
        }
    }
    const double cp = params.hazard * evidence;
    if (Z == 1) {
        next[0] = cp;
    } else {
        const double rest = cp * (1.0 - stickiness) / static_cast<double>(Z - 1);
        for (std::size_t z = 0; z < Z; ++z) next[z] = (z == z_now) ? cp * stickiness : rest;
    }
    detail::normalize_or_throw(next);
    return JointBelief(H, Z, std::move(next));
}

/// Trace snapshot {probs, h_max, step_index}.
inline nlohmann::json belief_snapshot(const RunLengthBelief& belief, std::size_t step_index) {
    return nlohmann::json{{"probs", std::vector<double>(belief.probs().begin(), belief.probs().end())},
                          {"h_max", belief.h_max()},
                          {"step_index", step_index}};
}

inline RunLengthBelief belief_from_snapshot(const nlohmann::json& j) {
    auto probs = j.at("probs").get<std::vector<double>>();
    if (probs.size() != j.at("h_max").get<std::size_t>())
        throw DimensionError("snapshot h_max does not match probs length");
    return RunLengthBelief(std::move(probs));
}

} // namespace bapr

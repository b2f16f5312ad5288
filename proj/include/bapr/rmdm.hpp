#pragma once

// Mode-representation losses: within-mode consistency (spread of each mode's
// embeddings) and DPP diversity (-log det of an RBF kernel over mode means),
// plus a small linear context map fitted by finite-difference descent.

#include "bapr/error.hpp"
#include "bapr/random.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bapr {

enum class VarianceConvention {
    Total,       // sqrt(sum_d var_d + eps)
    PerDimension // mean_d sqrt(var_d + eps)
};

struct RMDMConfig {
    double w_cons = 50.0;
    double w_div = 0.025;
    double r_rbf = 2.0;
    double eps = 1e-6;
    std::size_t d_e = 2;
    VarianceConvention convention = VarianceConvention::Total;

    void validate() const {
        if (!(w_cons >= 0.0 && w_div >= 0.0)) throw DomainError("RMDM weights must be >= 0");
        if (!(r_rbf > 0.0)) throw DomainError("r_rbf must be > 0");
        if (!(eps > 0.0)) throw DomainError("eps must be > 0");
        if (d_e == 0) throw DomainError("d_e must be >= 1");
    }
};

/// v / (||v||_2 + eps). The zero vector maps to itself.
inline std::vector<double> normalize_embedding(std::span<const double> v, double eps) {
    if (!(eps > 0.0)) throw DomainError("eps must be > 0");
    double sq = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw DomainError("embedding is not finite");
        sq += x * x;
    }
    const double denom = std::sqrt(sq) + eps;
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x /= denom;
    return out;
}

/// n embeddings of dimension d (row-major) with their mode labels.
struct EmbeddingBatch {
    std::size_t dim = 0;
    std::vector<double> vectors;
    std::vector<int> mode_ids;

    EmbeddingBatch(std::size_t d, std::vector<double> v, std::vector<int> ids)
        : dim(d), vectors(std::move(v)), mode_ids(std::move(ids)) {
        if (dim == 0) throw DimensionError("embedding dimension must be >= 1");
        if (vectors.size() != dim * mode_ids.size())
            throw DimensionError("embedding count does not match mode labels");
        for (double x : vectors)
            if (!std::isfinite(x)) throw DomainError("embedding is not finite");
    }

    std::size_t size() const noexcept { return mode_ids.size(); }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(vectors).subspan(i * dim, dim);
    }

    /// Sample indices per mode, modes in ascending label order.
    std::map<int, std::vector<std::size_t>> groups() const {
        std::map<int, std::vector<std::size_t>> g;
        for (std::size_t i = 0; i < mode_ids.size(); ++i) g[mode_ids[i]].push_back(i);
        return g;
    }
};

/// Mean over modes of the within-mode spread, using unbiased per-dimension
/// variances (two-pass).
inline double consistency_loss(const EmbeddingBatch& batch, double eps,
                               VarianceConvention convention = VarianceConvention::Total) {
    const auto groups = batch.groups();
    if (groups.empty()) throw DomainError("consistency loss needs at least one mode");
    double total = 0.0;
    for (const auto& [mode, idx] : groups) {
        if (idx.size() < 2)
            throw DomainError("mode " + std::to_string(mode) + " has fewer than 2 samples");
        const double n = static_cast<double>(idx.size());
        double acc = 0.0;
        for (std::size_t d = 0; d < batch.dim; ++d) {
            double mean = 0.0;
            for (std::size_t i : idx) mean += batch.row(i)[d];
            mean /= n;
            double ss = 0.0;
            for (std::size_t i : idx) {
                const double diff = batch.row(i)[d] - mean;
                ss += diff * diff;
            }
            const double var = ss / (n - 1.0);
            acc += convention == VarianceConvention::Total ? var : std::sqrt(var + eps);
        }
        total += convention == VarianceConvention::Total ? std::sqrt(acc + eps)
                                                         : acc / static_cast<double>(batch.dim);
    }
    return total / static_cast<double>(groups.size());
}

/// Per-mode mean embeddings (M x d, row-major), modes in ascending label order.
inline std::vector<double> mode_means(const EmbeddingBatch& batch) {
    std::vector<double> means;
    for (const auto& [mode, idx] : batch.groups()) {
        for (std::size_t d = 0; d < batch.dim; ++d) {
            double m = 0.0;
            for (std::size_t i : idx) m += batch.row(i)[d];
            means.push_back(m / static_cast<double>(idx.size()));
        }
    }
    return means;
}

/// K_ij = exp(-r_rbf ||e_i - e_j||^2) + eps [i = j]
inline std::vector<double> rbf_kernel(std::span<const double> means, std::size_t dim, double r_rbf,
                                      double eps) {
    if (dim == 0 || means.size() % dim != 0) throw DimensionError("mode means are not M x d");
    const std::size_t M = means.size() / dim;
    std::vector<double> K(M * M);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) {
            double sq = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = means[i * dim + d] - means[j * dim + d];
                sq += diff * diff;
            }
            K[i * M + j] = std::exp(-r_rbf * sq) + (i == j ? eps : 0.0);
        }
    return K;
}

/// log det of a symmetric positive definite matrix via Cholesky.
inline double log_det_spd(std::vector<double> K, std::size_t n) {
    if (K.size() != n * n) throw DimensionError("matrix is not n x n");
    double log_det = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double diag = K[j * n + j];
        for (std::size_t k = 0; k < j; ++k) diag -= K[j * n + k] * K[j * n + k];
        if (!(diag > 0.0)) throw DomainError("kernel matrix is not positive definite");
        const double ljj = std::sqrt(diag);
        K[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = K[i * n + j];
            for (std::size_t k = 0; k < j; ++k) v -= K[i * n + k] * K[j * n + k];
            K[i * n + j] = v / ljj;
        }
        // log of the pivot itself, not 2 log sqrt: keeps 1-ulp pivot differences
        log_det += std::log(diag);
    }
    return log_det;
}

/// -log det K over mode-mean embeddings.
inline double diversity_loss(std::span<const double> means, std::size_t dim, double r_rbf, double eps) {
    for (double x : means)
        if (!std::isfinite(x)) throw DomainError("mode mean is not finite");
    if (dim == 0 || means.empty() || means.size() % dim != 0)
        throw DimensionError("mode means are not M x d with M >= 1");
    const std::size_t M = means.size() / dim;
    return -log_det_spd(rbf_kernel(means, dim, r_rbf, eps), M);
}

struct RMDMLoss {
    double total = 0.0;
    double l_cons = 0.0;
    double l_div = 0.0;
};

inline RMDMLoss rmdm_loss(const EmbeddingBatch& batch, const RMDMConfig& config) {
    RMDMLoss loss;
    loss.l_cons = consistency_loss(batch, config.eps, config.convention);
    loss.l_div = diversity_loss(mode_means(batch), batch.dim, config.r_rbf, config.eps);
    loss.total = config.w_cons * loss.l_cons + config.w_div * loss.l_div;
    return loss;
}

// --- linear context fitter ----------------------------------------------------

struct LabeledState {
    std::vector<double> state;
    int mode = 0;
};

/// e = normalize(W s) with W of shape d_e x state_dim.
struct LinearContext {
    std::size_t d_e = 0;
    std::size_t state_dim = 0;
    std::vector<double> weights;

    std::vector<double> embed(std::span<const double> s, double eps) const {
        if (s.size() != state_dim) throw DimensionError("state dimension differs from context map");
        std::vector<double> e(d_e, 0.0);
        for (std::size_t i = 0; i < d_e; ++i)
            for (std::size_t j = 0; j < state_dim; ++j) e[i] += weights[i * state_dim + j] * s[j];
        return normalize_embedding(e, eps);
    }

    EmbeddingBatch embed_all(std::span<const LabeledState> data, double eps) const {
        std::vector<double> v;
        std::vector<int> ids;
        v.reserve(data.size() * d_e);
        for (const auto& x : data) {
            const auto e = embed(x.state, eps);
            v.insert(v.end(), e.begin(), e.end());
            ids.push_back(x.mode);
        }
        return EmbeddingBatch(d_e, std::move(v), std::move(ids));
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i = 0; i < d_e; ++i)
            rows.push_back(std::vector<double>(weights.begin() + static_cast<std::ptrdiff_t>(i * state_dim),
                                               weights.begin() + static_cast<std::ptrdiff_t>((i + 1) * state_dim)));
        return rows;
    }
};

struct ContextFit {
    LinearContext map;
    double initial_loss = 0.0;
    double best_loss = 0.0;
    std::size_t best_step = 0;
};

inline double context_loss(const LinearContext& map, std::span<const LabeledState> data,
                           const RMDMConfig& config) {
    return rmdm_loss(map.embed_all(data, config.eps), config).total;
}

/// Gradient descent on the RMDM loss with central finite-difference
/// gradients (step 1e-5). Returns the lowest-loss map seen, so the result is
/// never worse than the initialization.
inline ContextFit fit_linear_context(std::span<const LabeledState> data, const RMDMConfig& config,
                                     std::size_t steps, double lr, std::uint64_t seed) {
    config.validate();
    if (data.empty()) throw DomainError("no training data");
    std::map<int, std::size_t> per_mode;
    for (const auto& x : data) ++per_mode[x.mode];
    if (per_mode.size() < 2) throw DomainError("context fitting needs at least two modes");
    for (const auto& [mode, n] : per_mode)
        if (n < 2) throw DomainError("every mode needs at least two samples");

    LinearContext map{config.d_e, data[0].state.size(), {}};
    if (map.state_dim == 0) throw DimensionError("empty state vectors");
    Rng rng(seed);
    map.weights.resize(map.d_e * map.state_dim);
    for (double& w : map.weights) w = rng.normal(0.0, 1.0);

    constexpr double h = 1e-5;
    ContextFit fit{map, context_loss(map, data, config), 0.0, 0};
    fit.best_loss = fit.initial_loss;
    std::vector<double> grad(map.weights.size());
    for (std::size_t step = 1; step <= steps; ++step) {
        for (std::size_t k = 0; k < map.weights.size(); ++k) {
            const double w0 = map.weights[k];
            map.weights[k] = w0 + h;
            const double up = context_loss(map, data, config);
            map.weights[k] = w0 - h;
            const double down = context_loss(map, data, config);
            map.weights[k] = w0;
            grad[k] = (up - down) / (2.0 * h);
        }
        for (std::size_t k = 0; k < grad.size(); ++k) map.weights[k] -= lr * grad[k];
        const double loss = context_loss(map, data, config);
        if (!std::isfinite(loss))
            throw DomainError("context fit produced a non-finite loss at step " + std::to_string(step));
        if (loss < fit.best_loss) {
            fit.best_loss = loss;
            fit.map = map;
            fit.best_step = step;
        }
    }
    return fit;
}

} // namespace bapr

#pragma once

// Experiment configuration: one JSON document, every field optional with a
// documented default, unknown fields rejected. Schema: docs/config.md.

#include "bapr/adaptive.hpp"
#include "bapr/bocd.hpp"
#include "bapr/error.hpp"
#include "bapr/mdp_core.hpp"
#include "bapr/operators.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace bapr::harness {

using nlohmann::json;

struct GeneratedMode {
    std::uint64_t seed = 0;
    std::size_t states = 30;
    std::size_t actions = 4;
    double reward_min = 0.0;
    double reward_max = 1.0;
};

/// Copy of an earlier mode with every reward shifted.
struct ShiftedMode {
    std::size_t base = 0;
    double reward_shift = 0.0;
};

using ModeSpec = std::variant<GeneratedMode, ShiftedMode, ModeModel>;

/// Deliberate defects the harness can be told to inject; certification must
/// catch each of them.
enum class Mutation {
    UnnormalizedBelief, // mixture weights scaled to sum 0.9
    UnfrozenBelief,     // backup re-infers the belief from the Q it is updating
    DroppedSurpriseClip // fused surprise no longer clipped to [0, clip_max]
};

inline const char* to_string(Mutation m) {
    switch (m) {
    case Mutation::UnnormalizedBelief: return "unnormalized-belief";
    case Mutation::UnfrozenBelief: return "unfrozen-belief";
    case Mutation::DroppedSurpriseClip: return "dropped-clip";
    }
    return "?";
}

inline Mutation mutation_from_string(const std::string& s) {
    for (Mutation m : {Mutation::UnnormalizedBelief, Mutation::UnfrozenBelief,
                       Mutation::DroppedSurpriseClip})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown mutation '" + s + "'");
}

using MutationSet = std::set<Mutation>;

struct BocdConfig {
    BOCDParams params;
    bool joint = false; // also track b(h, z) over online k-means regime clusters
    std::size_t n_clusters = 4;
    double stickiness = 0.6;
};

struct ExperimentConfig {
    OperatorParams op{0.99, 1.0, 0.0};
    std::vector<ModeSpec> modes = {GeneratedMode{1, 30, 4, 0.0, 1.0}, GeneratedMode{2, 30, 4, 0.0, 1.0}};
    std::vector<Segment> schedule = {{0, 300}, {1, 300}};
    BocdConfig bocd;
    AdaptiveState adaptive;
    SurpriseWeights surprise;
    std::optional<std::vector<std::vector<std::size_t>>> projection;
    double noise_sigma = 0.0;
    std::size_t n_ensemble = 10;
    double ensemble_sigma = 0.05;
    std::size_t rollout_length = 32;
    double reward_noise = 0.0;
    double mode_obs_sigma = 0.1;
    double separability_L = 2.0;
    double detection_delta = 0.05;
    bool detection_hold = false;
    double fixed_point_tol = 1e-10;
    std::uint64_t seed = 0;
    std::string output_dir = ".";
    std::string format = "csv";
    MutationSet mutations; // programmatic only, never read from JSON
};

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                           const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(where + ": unknown field '" + it.key() + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline ModeModel explicit_mode(const json& j, const std::string& where) {
    reject_unknown(j, {"reward", "kernel", "gamma_epi"}, where);
    try {
        const auto reward = j.at("reward").get<std::vector<std::vector<double>>>();
        const auto kernel = j.at("kernel").get<std::vector<std::vector<std::vector<double>>>>();
        ModeModel m;
        m.states = reward.size();
        m.actions = m.states ? reward[0].size() : 0;
        for (const auto& row : reward) {
            if (row.size() != m.actions) throw ConfigError(where + ": ragged reward table");
            m.reward.insert(m.reward.end(), row.begin(), row.end());
        }
        if (kernel.size() != m.states) throw ConfigError(where + ": kernel needs one block per state");
        for (const auto& block : kernel) {
            if (block.size() != m.actions) throw ConfigError(where + ": kernel needs one row per action");
            for (const auto& row : block) {
                if (row.size() != m.states) throw ConfigError(where + ": kernel row length != states");
                m.kernel.insert(m.kernel.end(), row.begin(), row.end());
            }
        }
        if (j.contains("gamma_epi")) {
            for (const auto& row : j.at("gamma_epi").get<std::vector<std::vector<double>>>())
                m.gamma_epi.insert(m.gamma_epi.end(), row.begin(), row.end());
        } else {
            m.gamma_epi.assign(m.states * m.actions, 0.0);
        }
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

inline json matrix_json(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    json out = json::array();
    for (std::size_t r = 0; r < rows; ++r)
        out.push_back(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                          v.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)));
    return out;
}

} // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    using detail::read;
    detail::reject_unknown(j,
                           {"gamma", "lambda_epi", "kappa", "modes", "schedule", "bocd", "adaptive",
                            "surprise", "projection", "noise_sigma", "n_ensemble", "ensemble_sigma",
                            "rollout_length", "reward_noise", "mode_obs_sigma", "separability_L",
                            "detection_delta", "detection_hold", "fixed_point_tol", "seed",
                            "output_dir", "format"},
                           "config");
    ExperimentConfig c;
    read(j, "gamma", c.op.gamma, "config");
    read(j, "lambda_epi", c.op.lambda_epi, "config");
    read(j, "kappa", c.op.kappa, "config");
    if (j.contains("modes")) {
        c.modes.clear();
        std::size_t i = 0;
        for (const auto& m : j.at("modes")) {
            const std::string where = "config.modes[" + std::to_string(i++) + "]";
            if (m.contains("generator")) {
                detail::reject_unknown(m, {"generator"}, where);
                GeneratedMode g;
                const auto& gj = m.at("generator");
                detail::reject_unknown(gj, {"seed", "states", "actions", "reward_min", "reward_max"},
                                       where + ".generator");
                read(gj, "seed", g.seed, where);
                read(gj, "states", g.states, where);
                read(gj, "actions", g.actions, where);
                read(gj, "reward_min", g.reward_min, where);
                read(gj, "reward_max", g.reward_max, where);
                c.modes.emplace_back(g);
            } else if (m.contains("shift_of")) {
                detail::reject_unknown(m, {"shift_of", "reward_shift"}, where);
                ShiftedMode s;
                read(m, "shift_of", s.base, where);
                read(m, "reward_shift", s.reward_shift, where);
                c.modes.emplace_back(s);
            } else {
                c.modes.emplace_back(detail::explicit_mode(m, where));
            }
        }
    }
    if (j.contains("schedule")) {
        c.schedule.clear();
        for (const auto& s : j.at("schedule")) {
            detail::reject_unknown(s, {"mode", "dwell"}, "config.schedule[]");
            Segment seg;
            read(s, "mode", seg.mode, "config.schedule[]");
            read(s, "dwell", seg.dwell, "config.schedule[]");
            c.schedule.push_back(seg);
        }
    }
    if (j.contains("bocd")) {
        const auto& b = j.at("bocd");
        detail::reject_unknown(b, {"h_max", "hazard", "sigma0_sq", "sigma_g", "joint", "n_clusters", "stickiness"},
                               "config.bocd");
        read(b, "h_max", c.bocd.params.h_max, "config.bocd");
        read(b, "hazard", c.bocd.params.hazard, "config.bocd");
        read(b, "sigma0_sq", c.bocd.params.sigma0_sq, "config.bocd");
        read(b, "sigma_g", c.bocd.params.sigma_g, "config.bocd");
        read(b, "joint", c.bocd.joint, "config.bocd");
        read(b, "n_clusters", c.bocd.n_clusters, "config.bocd");
        read(b, "stickiness", c.bocd.stickiness, "config.bocd");
    }
    if (j.contains("adaptive")) {
        const auto& a = j.at("adaptive");
        detail::reject_unknown(a, {"beta_base", "c_penalty", "baseline_rate", "surprise_ema_rate", "smooth_surprise"},
                               "config.adaptive");
        read(a, "beta_base", c.adaptive.beta_base, "config.adaptive");
        read(a, "c_penalty", c.adaptive.c_penalty, "config.adaptive");
        read(a, "baseline_rate", c.adaptive.ema_rate, "config.adaptive");
        read(a, "surprise_ema_rate", c.adaptive.surprise_ema_rate, "config.adaptive");
        read(a, "smooth_surprise", c.adaptive.smooth_surprise, "config.adaptive");
    }
    if (j.contains("surprise")) {
        const auto& s = j.at("surprise");
        detail::reject_unknown(s, {"w_r", "w_q", "w_kappa", "clip_max"}, "config.surprise");
        read(s, "w_r", c.surprise.w_r, "config.surprise");
        read(s, "w_q", c.surprise.w_q, "config.surprise");
        read(s, "w_kappa", c.surprise.w_kappa, "config.surprise");
        read(s, "clip_max", c.surprise.clip_max, "config.surprise");
    }
    if (j.contains("projection") && !j.at("projection").is_null()) {
        std::vector<std::vector<std::size_t>> blocks;
        read(j, "projection", blocks, "config");
        c.projection = std::move(blocks);
    }
    read(j, "noise_sigma", c.noise_sigma, "config");
    read(j, "n_ensemble", c.n_ensemble, "config");
    read(j, "ensemble_sigma", c.ensemble_sigma, "config");
    read(j, "rollout_length", c.rollout_length, "config");
    read(j, "reward_noise", c.reward_noise, "config");
    read(j, "mode_obs_sigma", c.mode_obs_sigma, "config");
    read(j, "separability_L", c.separability_L, "config");
    read(j, "detection_delta", c.detection_delta, "config");
    read(j, "detection_hold", c.detection_hold, "config");
    read(j, "fixed_point_tol", c.fixed_point_tol, "config");
    read(j, "seed", c.seed, "config");
    read(j, "output_dir", c.output_dir, "config");
    read(j, "format", c.format, "config");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open config file");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j);
}

/// Materializes the mode list; shifted modes may only reference earlier modes.
inline std::vector<ModeModel> resolve_modes(const ExperimentConfig& c) {
    std::vector<ModeModel> out;
    for (std::size_t i = 0; i < c.modes.size(); ++i) {
        const auto& spec = c.modes[i];
        if (const auto* g = std::get_if<GeneratedMode>(&spec)) {
            if (g->states == 0 || g->actions == 0)
                throw ConfigError("mode " + std::to_string(i) + ": states and actions must be >= 1");
            out.push_back(make_random_mode(g->seed, g->states, g->actions, g->reward_min, g->reward_max));
        } else if (const auto* s = std::get_if<ShiftedMode>(&spec)) {
            if (s->base >= i)
                throw ConfigError("mode " + std::to_string(i) + ": shift_of must name an earlier mode");
            out.push_back(with_reward_shift(out[s->base], s->reward_shift));
        } else {
            out.push_back(std::get<ModeModel>(spec));
        }
        const auto report = validate_mode(out.back());
        if (!report.ok())
            throw ConfigError("mode " + std::to_string(i) + " is invalid:\n" + report.describe());
    }
    return out;
}

/// Checks everything that can be checked before an experiment starts.
inline void validate_config(const ExperimentConfig& c) {
    try {
        c.op.validate();
        c.bocd.params.validate();
        c.adaptive.validate();
        c.surprise.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    if (c.modes.empty()) throw ConfigError("at least one mode is required");
    const auto models = resolve_modes(c);
    for (const auto& m : models)
        if (m.states != models[0].states || m.actions != models[0].actions)
            throw ConfigError("all modes must share the same state and action counts");
    try {
        PiecewiseSchedule(c.schedule, models.size());
        if (c.projection) StatePartition(*c.projection, models[0].states);
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    if (c.bocd.n_clusters == 0) throw ConfigError("bocd.n_clusters must be >= 1");
    if (!(c.bocd.stickiness > 0.0 && c.bocd.stickiness <= 1.0))
        throw ConfigError("bocd.stickiness must lie in (0, 1]");
    if (!(c.noise_sigma >= 0.0) || !(c.ensemble_sigma >= 0.0) || !(c.reward_noise >= 0.0))
        throw ConfigError("noise levels must be >= 0");
    if (!(c.mode_obs_sigma > 0.0)) throw ConfigError("mode_obs_sigma must be > 0");
    if (c.rollout_length == 0) throw ConfigError("rollout_length must be >= 1");
    if (!(c.separability_L > 1.0)) throw ConfigError("separability_L must be > 1");
    if (!(c.detection_delta > 0.0 && c.detection_delta < 1.0))
        throw ConfigError("detection_delta must lie in (0, 1)");
    if (!(c.fixed_point_tol > 0.0)) throw ConfigError("fixed_point_tol must be > 0");
    if (c.format != "csv" && c.format != "json") throw ConfigError("format must be csv or json");
}

inline json config_to_json(const ExperimentConfig& c) {
    json modes = json::array();
    for (const auto& spec : c.modes) {
        if (const auto* g = std::get_if<GeneratedMode>(&spec)) {
            modes.push_back({{"generator",
                              {{"seed", g->seed},
                               {"states", g->states},
                               {"actions", g->actions},
                               {"reward_min", g->reward_min},
                               {"reward_max", g->reward_max}}}});
        } else if (const auto* sh = std::get_if<ShiftedMode>(&spec)) {
            modes.push_back({{"shift_of", sh->base}, {"reward_shift", sh->reward_shift}});
        } else {
            const auto& m = std::get<ModeModel>(spec);
            json kernel = json::array();
            for (std::size_t s = 0; s < m.states; ++s) {
                json block = json::array();
                for (std::size_t a = 0; a < m.actions; ++a) {
                    const auto row = m.kernel_row(s, a);
                    block.push_back(std::vector<double>(row.begin(), row.end()));
                }
                kernel.push_back(block);
            }
            modes.push_back({{"reward", detail::matrix_json(m.reward, m.states, m.actions)},
                             {"kernel", kernel},
                             {"gamma_epi", detail::matrix_json(m.gamma_epi, m.states, m.actions)}});
        }
    }
    json schedule = json::array();
    for (const auto& s : c.schedule) schedule.push_back({{"mode", s.mode}, {"dwell", s.dwell}});
    return json{
        {"gamma", c.op.gamma},
        {"lambda_epi", c.op.lambda_epi},
        {"kappa", c.op.kappa},
        {"modes", modes},
        {"schedule", schedule},
        {"bocd",
         {{"h_max", c.bocd.params.h_max},
          {"hazard", c.bocd.params.hazard},
          {"sigma0_sq", c.bocd.params.sigma0_sq},
          {"sigma_g", c.bocd.params.sigma_g},
          {"joint", c.bocd.joint},
          {"n_clusters", c.bocd.n_clusters},
          {"stickiness", c.bocd.stickiness}}},
        {"adaptive",
         {{"beta_base", c.adaptive.beta_base},
          {"c_penalty", c.adaptive.c_penalty},
          {"baseline_rate", c.adaptive.ema_rate},
          {"surprise_ema_rate", c.adaptive.surprise_ema_rate},
          {"smooth_surprise", c.adaptive.smooth_surprise}}},
        {"surprise",
         {{"w_r", c.surprise.w_r},
          {"w_q", c.surprise.w_q},
          {"w_kappa", c.surprise.w_kappa},
          {"clip_max", c.surprise.clip_max}}},
        {"projection", c.projection ? json(*c.projection) : json(nullptr)},
        {"noise_sigma", c.noise_sigma},
        {"n_ensemble", c.n_ensemble},
        {"ensemble_sigma", c.ensemble_sigma},
        {"rollout_length", c.rollout_length},
        {"reward_noise", c.reward_noise},
        {"mode_obs_sigma", c.mode_obs_sigma},
        {"separability_L", c.separability_L},
        {"detection_delta", c.detection_delta},
        {"detection_hold", c.detection_hold},
        {"fixed_point_tol", c.fixed_point_tol},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"format", c.format},
    };
}

} // namespace bapr::harness

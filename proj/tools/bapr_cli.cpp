// bapr_cli: experiment runner.
//   piecewise        run a scripted regime-switch experiment, emit its trace
//   threshold-sweep  phase map of the Q-dependent operator
//   delay-table      detection-delay table with synthetic-stream column
//   certify          all certification suites; exit 2 on any failure
//   rmdm-demo        fit the linear context map on the separable dataset
// Exit codes: 0 ok, 1 config/usage error, 2 certification failure, 3 I/O error.

#include "bapr/harness/certify.hpp"
#include "bapr/harness/config.hpp"
#include "bapr/harness/piecewise.hpp"
#include "bapr/harness/sweeps.hpp"
#include "bapr/harness/trace.hpp"
#include "bapr/rmdm.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace bapr;
using namespace bapr::harness;

namespace {

enum Exit { kOk = 0, kConfig = 1, kCertification = 2, kIo = 3 };

std::string prepare_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError(dir, "cannot create output directory");
    return dir;
}

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

void write_json(const std::string& path, const nlohmann::json& j) {
    bapr::harness::detail::write_file(path, j.dump(2) + "\n");
}

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> format;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
    if (with_config) cmd->add_option("--config", c.config_path, "JSON config file (docs/config.md)");
    cmd->add_option("--seed", c.seed, "master seed");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

int cmd_piecewise(const Common& c) {
    ExperimentConfig config = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    if (c.seed) config.seed = *c.seed;
    if (c.out) config.output_dir = *c.out;
    if (c.format) config.format = *c.format;
    validate_config(config);
    for (const auto& w : metastability_warnings(config)) std::cerr << "warning: " << w << "\n";

    const auto result = run_piecewise(config);
    const auto check = analyze_piecewise(result);
    const std::string dir = prepare_dir(config.output_dir);
    const auto format = trace_format_from_string(config.format);
    const std::string trace_path = join(dir, format == TraceFormat::Csv ? "trace.csv" : "trace.json");
    emit_trace(result.trace, format, trace_path);

    nlohmann::json switches = nlohmann::json::array();
    for (const auto& s : result.switches)
        switches.push_back({{"iter", s.iter}, {"from", s.from}, {"to", s.to}, {"delta_r", s.delta_r},
                            {"e_switch", s.e_switch}});
    write_json(join(dir, "summary.json"),
               {{"iterations", result.trace.size()},
                {"detect_steps", result.detect_steps},
                {"eps_proj", result.eps_proj},
                {"floors", result.floors},
                {"switches", switches},
                {"warnings", result.warnings},
                {"checks",
                 {{"max_jump_violation", check.max_jump_violation},
                  {"max_envelope_violation", check.max_envelope_violation},
                  {"lambda_rises", check.lambda_rises},
                  {"lambda_settles", check.lambda_settles},
                  {"beta_bounded", check.beta_bounded},
                  {"failures", check.failures}}}});
    write_json(join(dir, "config.json"), config_to_json(config));
    std::cout << "wrote " << trace_path << " (" << result.trace.size() << " rows)\n";
    for (const auto& f : check.failures) std::cout << "check: " << f << "\n";
    return kOk;
}

int cmd_threshold_sweep(const Common& c, std::size_t n_iter) {
    const auto map = run_default_threshold_sweep(n_iter);
    const std::string dir = prepare_dir(c.out.value_or("."));
    const bool csv = c.format.value_or("csv") == "csv";
    const std::string path = join(dir, csv ? "phase_map.csv" : "phase_map.json");
    if (csv)
        bapr::harness::detail::write_file(path, phase_map_to_csv(map));
    else
        write_json(path, phase_map_to_json(map));
    std::cout << "wrote " << path << "; cells off the analytic line: " << map.mismatches() << "\n";
    return kOk;
}

int cmd_delay_table(const Common& c) {
    const auto table = run_delay_table(c.seed.value_or(0));
    std::printf("%6s %6s %6s %9s %5s %9s\n", "L", "r0", "delta", "n_delta", "ceil", "empirical");
    for (const auto& r : table)
        std::printf("%6.2f %6.1f %6.2f %9.4f %5zu %9zu\n", r.L, r.r0, r.delta, r.n_delta, r.ceil_n, r.empirical);
    if (c.out) {
        const std::string dir = prepare_dir(*c.out);
        const bool csv = c.format.value_or("csv") == "csv";
        const std::string path = join(dir, csv ? "delay_table.csv" : "delay_table.json");
        if (csv)
            bapr::harness::detail::write_file(path, delay_table_to_csv(table));
        else
            write_json(path, delay_table_to_json(table));
        std::cout << "wrote " << path << "\n";
    }
    return kOk;
}

int cmd_certify(const Common& c, const std::vector<std::string>& mutations) {
    CertifyConfig cfg;
    cfg.seed = c.seed.value_or(0);
    for (const auto& m : mutations) cfg.mutations.insert(mutation_from_string(m));
    const auto report = run_certification(cfg);
    for (const auto& e : report.entries)
        std::printf("%-4s %-44s n=%-7zu worst=%-12.4g tol=%g\n", e.pass ? "ok" : "FAIL", e.name.c_str(),
                    e.tested_instances, e.max_violation, e.tolerance);
    const std::string path = join(prepare_dir(c.out.value_or(".")), "certification.json");
    write_json(path, report_to_json(report));
    std::cout << "wrote " << path << "\n";
    return report.all_pass() ? kOk : kCertification;
}

int cmd_rmdm_demo(const Common& c, std::size_t steps, double lr) {
    const std::uint64_t seed = c.seed.value_or(0);
    const RMDMConfig config;
    const auto data = separable_context_dataset(seed);
    const auto fit = fit_linear_context(data, config, steps, lr, seed);
    const auto batch = fit.map.embed_all(data, config.eps);
    const auto loss = rmdm_loss(batch, config);
    const double dist = mode_mean_distance(batch);
    std::printf("initial loss %.6g, best loss %.6g at step %zu, mode-mean distance %.4f\n", fit.initial_loss,
                fit.best_loss, fit.best_step, dist);
    if (c.out) {
        const std::string path = join(prepare_dir(*c.out), "rmdm.json");
        write_json(path, {{"initial_loss", fit.initial_loss},
                          {"best_loss", fit.best_loss},
                          {"best_step", fit.best_step},
                          {"l_cons", loss.l_cons},
                          {"l_div", loss.l_div},
                          {"mode_mean_distance", dist},
                          {"weights", fit.map.to_json()}});
        std::cout << "wrote " << path << "\n";
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Belief-weighted piecewise-robust value iteration: experiments and certification"};
    app.require_subcommand(1);

    Common pw, sweep, delay, certify, rmdm;
    auto* c_pw = app.add_subcommand("piecewise", "run a scripted regime-switch experiment");
    add_common(c_pw, pw, true);

    std::size_t n_iter = 200;
    auto* c_sweep = app.add_subcommand("threshold-sweep", "50x50 phase map of the Q-dependent operator");
    add_common(c_sweep, sweep, false);
    c_sweep->add_option("--n-iter", n_iter, "iterations per cell")->check(CLI::PositiveNumber);

    auto* c_delay = app.add_subcommand("delay-table", "detection-delay table");
    add_common(c_delay, delay, false);

    std::vector<std::string> mutations;
    auto* c_cert = app.add_subcommand("certify", "run every certification suite");
    add_common(c_cert, certify, false);
    c_cert->add_option("--mutate", mutations, "inject a defect: unnormalized-belief, unfrozen-belief, dropped-clip")
        ->check(CLI::IsMember({"unnormalized-belief", "unfrozen-belief", "dropped-clip"}));

    std::size_t steps = 100;
    double lr = 0.05;
    auto* c_rmdm = app.add_subcommand("rmdm-demo", "fit a linear context map on separable data");
    add_common(c_rmdm, rmdm, false);
    c_rmdm->add_option("--steps", steps, "gradient steps");
    c_rmdm->add_option("--lr", lr, "learning rate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*c_pw) return cmd_piecewise(pw);
        if (*c_sweep) return cmd_threshold_sweep(sweep, n_iter);
        if (*c_delay) return cmd_delay_table(delay);
        if (*c_cert) return cmd_certify(certify, mutations);
        if (*c_rmdm) return cmd_rmdm_demo(rmdm, steps, lr);
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.path() << ": " << e.what() << "\n";
        return kIo;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    }
    return kOk;
}

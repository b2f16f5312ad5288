#include "bapr/harness/certify.hpp"
#include "bapr/harness/config.hpp"
#include "bapr/harness/piecewise.hpp"
#include "bapr/harness/sweeps.hpp"
#include "bapr/harness/trace.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bapr;
using namespace bapr::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("bapr_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(BAPR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentTrace sample_trace(std::size_t n) {
    ExperimentTrace tr;
    for (std::size_t i = 0; i < n; ++i)
        tr.push_back({i, i % 2, 0.1 * static_cast<double>(i) + 1.0 / 3.0, 7.25, 0.693147180559945,
                      i == 1 ? 0.0125 : 0.0, -2.0 - 1e-17 * static_cast<double>(i), std::ldexp(1.0, -40),
                      static_cast<Phase>(i % 3)});
    return tr;
}

} // namespace

TEST(Config, DefaultsValidate) {
    const ExperimentConfig c;
    EXPECT_NO_THROW(validate_config(c));
    EXPECT_EQ(c.n_ensemble, 10u);
    EXPECT_EQ(c.bocd.params.h_max, 20u);
    EXPECT_EQ(c.adaptive.beta_base, -2.0);
    EXPECT_EQ(c.surprise.clip_max, 10.0);
}

TEST(Config, RejectsUnknownFieldsAtEveryLevel) {
    EXPECT_THROW(config_from_json(json::parse(R"({"gama": 0.9})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"bocd": {"hmax": 5}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"modes": [{"generator": {"sed": 1}}]})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"schedule": [{"mode": 0, "dwel": 3}]})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"gamma": "high"})")), ConfigError);
}

TEST(Config, SemanticErrors) {
    auto bad = [](const char* text) { validate_config(config_from_json(json::parse(text))); };
    EXPECT_THROW(bad(R"({"gamma": 1.0})"), ConfigError);
    EXPECT_THROW(bad(R"({"schedule": [{"mode": 5, "dwell": 3}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"schedule": [{"mode": 0, "dwell": 0}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"modes": [{"shift_of": 0, "reward_shift": 1}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"projection": [[0, 1]]})"), ConfigError);
    EXPECT_THROW(bad(R"({"format": "xml"})"), ConfigError);
    EXPECT_THROW(bad(R"({"bocd": {"hazard": 1.5}})"), ConfigError);
    EXPECT_THROW(bad(R"({"modes": [{"reward": [[1]], "kernel": [[[0.5]]]}], "schedule": [{"mode": 0, "dwell": 1}]})"),
                 ConfigError);
}

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.modes = {GeneratedMode{4, 5, 2, -1.0, 1.0}, ShiftedMode{0, 0.25}, make_random_mode(9, 5, 2)};
    c.schedule = {{0, 10}, {2, 5}, {1, 7}};
    c.projection = std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3, 4}};
    c.noise_sigma = 0.02;
    c.bocd.joint = true;
    c.seed = 123;
    const auto j = config_to_json(c);
    const auto back = config_from_json(json::parse(j.dump()));
    EXPECT_EQ(config_to_json(back), j);
    EXPECT_EQ(resolve_modes(back), resolve_modes(c));
}

TEST(Config, ExampleFileLoads) {
    const auto c = load_config(std::string(BAPR_SOURCE_DIR) + "/configs/two_mode_shift.json");
    EXPECT_NO_THROW(validate_config(c));
    EXPECT_EQ(c.op.gamma, 0.9);
    EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(Mutations, Names) {
    for (auto m : {Mutation::UnnormalizedBelief, Mutation::UnfrozenBelief, Mutation::DroppedSurpriseClip})
        EXPECT_EQ(mutation_from_string(to_string(m)), m);
    EXPECT_THROW(mutation_from_string("nope"), ConfigError);
}

TEST(Trace, EmptyIsHeaderOnly) {
    EXPECT_EQ(trace_to_csv({}), std::string(kTraceHeader) + "\n");
    EXPECT_TRUE(trace_from_csv(trace_to_csv({})).empty());
}

TEST(Trace, ThreeRowsFourLines) {
    const auto csv = trace_to_csv(sample_trace(3));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(csv.substr(0, kTraceHeader.size()), kTraceHeader);
}

TEST(Trace, CsvJsonRoundTrip) {
    const auto tr = sample_trace(25);
    const auto from_csv = trace_from_csv(trace_to_csv(tr));
    EXPECT_EQ(from_csv, tr);
    const auto from_json = trace_from_json(json::parse(trace_to_json(from_csv).dump()));
    EXPECT_EQ(from_json, tr);
}

TEST(Trace, MalformedCsv) {
    EXPECT_THROW(trace_from_csv(""), DomainError);
    EXPECT_THROW(trace_from_csv("iter,mode\n"), DomainError);
    EXPECT_THROW(trace_from_csv(std::string(kTraceHeader) + "\n1,0,x,0,0,0,0,0,steady\n"), DomainError);
    EXPECT_THROW(trace_from_csv(std::string(kTraceHeader) + "\n1,0,0,0,0,0,0,0,sleepy\n"), DomainError);
}

TEST(Trace, FileEmitAndIoError) {
    const auto dir = scratch("trace");
    const auto tr = sample_trace(4);
    emit_trace(tr, TraceFormat::Csv, (dir / "t.csv").string());
    emit_trace(tr, TraceFormat::Json, (dir / "t.json").string());
    EXPECT_EQ(read_trace((dir / "t.csv").string(), TraceFormat::Csv), tr);
    EXPECT_EQ(read_trace((dir / "t.json").string(), TraceFormat::Json), tr);
    try {
        emit_trace(tr, TraceFormat::Csv, (dir / "missing" / "t.csv").string());
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(e.path().find("missing"), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(Piecewise, SingleModeDecaysGeometrically) {
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.modes = {GeneratedMode{5, 10, 3, 1.0, 2.0}};
    c.schedule = {{0, 150}};
    const auto r = run_piecewise(c);
    ASSERT_EQ(r.trace.size(), 150u);
    // row t holds the error after t+1 backups from Q = 0
    const double e0 = sup_dist(QFunction::zeros(10, 3), r.fixed_points[0]);
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
        const double ref = std::pow(0.9, static_cast<double>(t + 1)) * e0;
        EXPECT_LE(r.trace[t].err, 2.0 * ref) << t;
        EXPECT_GE(r.trace[t].err, 0.5 * ref) << t;
    }
}

TEST(Piecewise, UniformShiftEnvelope) {
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.modes = {GeneratedMode{7, 30, 4, 0.0, 1.0}, ShiftedMode{0, 0.5}};
    c.schedule = {{0, 200}, {1, 200}};
    c.noise_sigma = 0.01;
    const auto r = run_piecewise(c);
    ASSERT_EQ(r.switches.size(), 1u);
    EXPECT_NEAR(r.switches[0].delta_r, 0.5, 1e-9);
    EXPECT_NEAR(r.switches[0].e_switch, (0.5 + 0.01) / 0.1, 1e-8);
    const auto check = analyze_piecewise(r);
    EXPECT_LE(check.max_jump_violation, 0.0);
    EXPECT_LE(check.max_envelope_violation, 0.0);
    EXPECT_TRUE(check.beta_bounded);
}

TEST(Piecewise, IdenticalModesKeepLambdaQuiet) {
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.modes = {GeneratedMode{11, 30, 4, 0.0, 1.0}, ShiftedMode{0, 0.0}};
    c.schedule = {{0, 150}, {1, 150}};
    const auto r = run_piecewise(c);
    for (std::size_t t = 50; t < r.trace.size(); ++t) EXPECT_LT(r.trace[t].lambda_w, 0.01) << t;
}

TEST(Piecewise, DeterministicAndSeedSensitive) {
    ExperimentConfig c = piecewise_certification_config(1, {});
    const auto a = run_piecewise(c), b = run_piecewise(c);
    EXPECT_EQ(a.trace, b.trace);
    c.seed = 2;
    EXPECT_NE(run_piecewise(c).trace, a.trace);
}

TEST(Piecewise, ThreePhaseChecks) {
    const auto r = run_piecewise(piecewise_certification_config(0, {}));
    const auto check = analyze_piecewise(r);
    EXPECT_TRUE(check.ok()) << ::testing::PrintToString(check.failures);
    bool saw_detection = false, saw_steady = false;
    for (const auto& row : r.trace) {
        saw_detection |= row.phase == Phase::Detection;
        saw_steady |= row.phase == Phase::Steady;
        EXPECT_LE(row.beta_eff, r.beta_base);
        EXPECT_GE(row.xi, 0.0);
        EXPECT_LE(row.xi, 10.0);
    }
    EXPECT_TRUE(saw_detection);
    EXPECT_TRUE(saw_steady);
}

TEST(Piecewise, ProjectedRunRespectsFloor) {
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.modes = {GeneratedMode{21, 6, 2, 0.0, 1.0}, GeneratedMode{22, 6, 2, 0.0, 1.0}};
    c.schedule = {{0, 200}, {1, 200}};
    c.projection = std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}, {4, 5}};
    c.noise_sigma = 0.02;
    const auto r = run_piecewise(c);
    EXPECT_GT(r.eps_proj[0], 0.0);
    const auto check = analyze_piecewise(r);
    EXPECT_LE(check.max_envelope_violation, 0.0);
    EXPECT_LE(check.max_jump_violation, 0.0);
}

TEST(Piecewise, JointBeliefRuns) {
    ExperimentConfig c = piecewise_certification_config(3, {});
    c.bocd.joint = true;
    const auto r = run_piecewise(c);
    EXPECT_EQ(r.trace.size(), 800u);
    EXPECT_LE(analyze_piecewise(r).max_envelope_violation, 0.0);
}

TEST(Piecewise, MetastabilityWarning) {
    ExperimentConfig c;
    c.op.gamma = 0.9;
    c.schedule = {{0, 5}, {1, 200}};
    const auto w = metastability_warnings(c);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_NE(w[0].find("segment 0"), std::string::npos);
}

TEST(Piecewise, InvalidConfigThrowsBeforeRunning) {
    ExperimentConfig c;
    c.schedule = {{3, 10}};
    EXPECT_THROW(run_piecewise(c), ConfigError);
}

TEST(Sweeps, ThresholdMap) {
    const auto map = run_default_threshold_sweep();
    EXPECT_EQ(map.cells.size(), 2500u);
    EXPECT_EQ(map.mismatches(), 0u);
    const auto cells = run_threshold_sweep({0.5, 0.99}, {0.2, 0.05}, 200);
    EXPECT_EQ(cells.at(0, 0).observed, TrajectoryClass::Converged);
    EXPECT_EQ(cells.at(1, 1).observed, TrajectoryClass::Diverged);
    EXPECT_NEAR(cells.at(1, 1).rate, 1.04, 1e-9);
    EXPECT_THROW(run_threshold_sweep({2.0}, {0.1}, 10), DomainError);
}

TEST(Sweeps, DelayTable) {
    const auto table = run_delay_table();
    ASSERT_EQ(table.size(), 4u);
    const double published[] = {0.9, 2.2, 8.2, 3.8};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(table[i].n_delta, published[i], 0.1);
        EXPECT_GE(table[i].empirical, table[i].ceil_n);
        EXPECT_LE(table[i].empirical, table[i].ceil_n + 1);
    }
}

TEST(Certify, MutationsAreCaught) {
    using M = Mutation;
    EXPECT_FALSE(check_discounting(1, {M::UnnormalizedBelief}).pass);
    EXPECT_FALSE(check_contraction(1, {M::UnfrozenBelief}, 10, 10).pass);
    EXPECT_FALSE(check_frozen_backup(1, {M::UnfrozenBelief}).pass);
    EXPECT_FALSE(check_surprise_clip(1, {M::DroppedSurpriseClip}).pass);
    EXPECT_TRUE(check_discounting(1, {}).pass);
    EXPECT_TRUE(check_frozen_backup(1, {}).pass);
    EXPECT_TRUE(check_surprise_clip(1, {}).pass);
}

TEST(Certify, ReportJsonRoundTrip) {
    CertificationReport r;
    r.seed = 99;
    r.mutations = {"dropped-clip"};
    r.entries = {{"a", 10, 1e-13, 1e-12, true, "stat a"}, {"b", 3, 0.5, 0.0, false, "stat b"}};
    const auto back = report_from_json(json::parse(report_to_json(r).dump()));
    EXPECT_EQ(back.seed, r.seed);
    EXPECT_EQ(back.mutations, r.mutations);
    EXPECT_EQ(back.entries, r.entries);
    EXPECT_EQ(back.failures(), std::vector<std::string>{"b"});
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("piecewise --format xml"), 1);
    EXPECT_EQ(run_cli("piecewise --config /nonexistent/cfg.json"), 3);

    std::ofstream(dir / "bad.json") << R"({"gamma": 0.9, "typo": 1})";
    EXPECT_EQ(run_cli("piecewise --config " + (dir / "bad.json").string()), 1);

    std::ofstream(dir / "blocker") << "x";
    EXPECT_EQ(run_cli("piecewise --out " + (dir / "blocker" / "sub").string()), 3);
    fs::remove_all(dir);
}

TEST(Cli, PiecewiseWritesParseableTrace) {
    const auto dir = scratch("cli_pw");
    const std::string cfg = std::string(BAPR_SOURCE_DIR) + "/configs/two_mode_shift.json";
    ASSERT_EQ(run_cli("piecewise --config " + cfg + " --out " + dir.string()), 0);
    const auto tr = read_trace((dir / "trace.csv").string(), TraceFormat::Csv);
    EXPECT_EQ(tr.size(), 400u);
    EXPECT_TRUE(fs::exists(dir / "summary.json"));
    const auto echoed = config_from_json(json::parse(slurp(dir / "config.json")));
    EXPECT_EQ(echoed.seed, 3u);

    ASSERT_EQ(run_cli("piecewise --config " + cfg + " --format json --out " + (dir / "j").string()), 0);
    EXPECT_EQ(read_trace((dir / "j" / "trace.json").string(), TraceFormat::Json), tr);
    fs::remove_all(dir);
}

TEST(Cli, OtherSubcommands) {
    const auto dir = scratch("cli_misc");
    EXPECT_EQ(run_cli("threshold-sweep --out " + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "phase_map.csv"));
    EXPECT_EQ(run_cli("delay-table --format json --out " + dir.string()), 0);
    EXPECT_TRUE(json::parse(slurp(dir / "delay_table.json")).is_array());
    EXPECT_EQ(run_cli("rmdm-demo --steps 20 --out " + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "rmdm.json"));
    EXPECT_EQ(run_cli("certify --mutate dropped-clip --out " + dir.string()), 2);
    EXPECT_EQ(run_cli("certify --mutate no-such-bug --out " + dir.string()), 1);
    fs::remove_all(dir);
}

#pragma once

// ExperimentTrace and its CSV / JSON forms. Doubles are written in shortest
// round-trip form so both encodings re-parse to bit-identical rows.

#include "bapr/error.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace bapr::harness {

enum class Phase { Detection, Contraction, Steady };

inline const char* to_string(Phase p) {
    switch (p) {
    case Phase::Detection: return "detection";
    case Phase::Contraction: return "contraction";
    case Phase::Steady: return "steady";
    }
    return "?";
}

inline Phase phase_from_string(std::string_view s) {
    if (s == "detection") return Phase::Detection;
    if (s == "contraction") return Phase::Contraction;
    if (s == "steady") return Phase::Steady;
    throw DomainError("unknown phase '" + std::string(s) + "'");
}

struct TraceRow {
    std::size_t iter = 0;
    std::size_t true_mode = 0;
    double xi = 0.0;
    double h_bar = 0.0;
    double entropy = 0.0;
    double lambda_w = 0.0;
    double beta_eff = 0.0;
    double err = 0.0; // sup distance to the active mode's fixed point
    Phase phase = Phase::Detection;

    friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

using ExperimentTrace = std::vector<TraceRow>;

inline constexpr std::string_view kTraceHeader =
    "iter,true_mode,xi,h_bar,entropy,lambda_w,beta_eff,err,phase";

namespace detail {

inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

template <class T>
T parse_number(std::string_view field, std::size_t line) {
    T value{};
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
        throw DomainError("trace line " + std::to_string(line) + ": bad number '" +
                          std::string(field) + "'");
    return value;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path, "cannot open for writing");
    out << content;
    out.flush();
    if (!out) throw IoError(path, "write failed");
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

inline std::string trace_to_csv(const ExperimentTrace& trace) {
    std::string out(kTraceHeader);
    out += '\n';
    for (const auto& r : trace) {
        out += std::to_string(r.iter) + ',' + std::to_string(r.true_mode) + ',' +
               detail::format_double(r.xi) + ',' + detail::format_double(r.h_bar) + ',' +
               detail::format_double(r.entropy) + ',' + detail::format_double(r.lambda_w) + ',' +
               detail::format_double(r.beta_eff) + ',' + detail::format_double(r.err) + ',' +
               to_string(r.phase) + '\n';
    }
    return out;
}

inline ExperimentTrace trace_from_csv(std::string_view text) {
    ExperimentTrace trace;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        if (line_no == 1) {
            if (line != kTraceHeader) throw DomainError("trace CSV header mismatch");
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == ',') {
                f.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        if (f.size() != 9) throw DomainError("trace line " + std::to_string(line_no) + ": expected 9 fields");
        TraceRow r;
        r.iter = detail::parse_number<std::size_t>(f[0], line_no);
        r.true_mode = detail::parse_number<std::size_t>(f[1], line_no);
        r.xi = detail::parse_number<double>(f[2], line_no);
        r.h_bar = detail::parse_number<double>(f[3], line_no);
        r.entropy = detail::parse_number<double>(f[4], line_no);
        r.lambda_w = detail::parse_number<double>(f[5], line_no);
        r.beta_eff = detail::parse_number<double>(f[6], line_no);
        r.err = detail::parse_number<double>(f[7], line_no);
        r.phase = phase_from_string(f[8]);
        trace.push_back(r);
    }
    if (line_no == 0) throw DomainError("trace CSV is empty (missing header)");
    return trace;
}

inline nlohmann::json trace_to_json(const ExperimentTrace& trace) {
    auto arr = nlohmann::json::array();
    for (const auto& r : trace)
        arr.push_back({{"iter", r.iter},
                       {"true_mode", r.true_mode},
                       {"xi", r.xi},
                       {"h_bar", r.h_bar},
                       {"entropy", r.entropy},
                       {"lambda_w", r.lambda_w},
                       {"beta_eff", r.beta_eff},
                       {"err", r.err},
                       {"phase", to_string(r.phase)}});
    return arr;
}

inline ExperimentTrace trace_from_json(const nlohmann::json& arr) {
    if (!arr.is_array()) throw DomainError("trace JSON must be an array");
    ExperimentTrace trace;
    for (const auto& o : arr) {
        TraceRow r;
        r.iter = o.at("iter").get<std::size_t>();
        r.true_mode = o.at("true_mode").get<std::size_t>();
        r.xi = o.at("xi").get<double>();
        r.h_bar = o.at("h_bar").get<double>();
        r.entropy = o.at("entropy").get<double>();
        r.lambda_w = o.at("lambda_w").get<double>();
        r.beta_eff = o.at("beta_eff").get<double>();
        r.err = o.at("err").get<double>();
        r.phase = phase_from_string(o.at("phase").get<std::string>());
        trace.push_back(r);
    }
    return trace;
}

enum class TraceFormat { Csv, Json };

inline TraceFormat trace_format_from_string(const std::string& s) {
    if (s == "csv") return TraceFormat::Csv;
    if (s == "json") return TraceFormat::Json;
    throw DomainError("unknown trace format '" + s + "'");
}

inline void emit_trace(const ExperimentTrace& trace, TraceFormat format, const std::string& path) {
    detail::write_file(path, format == TraceFormat::Csv ? trace_to_csv(trace)
                                                        : trace_to_json(trace).dump(1) + "\n");
}

inline ExperimentTrace read_trace(const std::string& path, TraceFormat format) {
    const std::string text = detail::read_file(path);
    if (format == TraceFormat::Csv) return trace_from_csv(text);
    try {
        return trace_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(path + ": " + e.what());
    }
}

} // namespace bapr::harness

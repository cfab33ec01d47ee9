#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tagdiff/configuration.hpp"
#include "tagdiff/dynamics.hpp"
#include "tagdiff/errors.hpp"
#include "tagdiff/estimators.hpp"

namespace tagdiff::io {

inline constexpr const char* kToolName = "tagdiff";
inline constexpr const char* kToolVersion = "0.1.0";

/// Round-trip formatting for CSV cells.
inline std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_num(const std::string& s, const std::string& where)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError(where + ": cannot parse number '" + s + "'");
    }
}

inline std::vector<std::string> split(const std::string& line, char sep = ',')
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- snapshots

template <std::size_t D>
std::string snapshot_csv(const Configuration<D>& c)
{
    std::string s = "particle";
    for (std::size_t k = 1; k <= D; ++k) s += ",x" + std::to_string(k);
    s += "\n";
    for (std::size_t i = 0; i < c.size(); ++i) {
        s += std::to_string(i);
        for (std::size_t k = 0; k < D; ++k) s += "," + num(c[i][k]);
        s += "\n";
    }
    return s;
}

template <std::size_t D>
nlohmann::json snapshot_sidecar(const Configuration<D>& c, double time)
{
    return {{"dimension", D}, {"side_length", c.box().side_length}, {"particles", c.size()}, {"time", time}, {"frame", "relative_to_tag"}};
}

/// Writes `<stem>.csv` and its sidecar `<stem>.json`.
template <std::size_t D>
void write_snapshot(const std::filesystem::path& stem, const Configuration<D>& c, double time = 0.0)
{
    write_text(stem.string() + ".csv", snapshot_csv(c));
    write_json(stem.string() + ".json", snapshot_sidecar(c, time));
}

template <std::size_t D>
Configuration<D> read_snapshot(const std::filesystem::path& stem)
{
    const std::string where = stem.string() + ".csv";
    const auto meta = nlohmann::json::parse(read_text(stem.string() + ".json"));
    if (meta.at("dimension").get<std::size_t>() != D) throw UsageError(stem.string() + ".json: dimension mismatch");
    const TorusBox<D> box(meta.at("side_length").get<double>());
    std::istringstream in(read_text(where));
    std::string line;
    std::getline(in, line);
    if (split(line).size() != D + 1 || line.rfind("particle", 0) != 0) throw UsageError(where + ": bad header");
    std::vector<Vec<D>> pts;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != D + 1) throw UsageError(where + ": bad row");
        Vec<D> x;
        for (std::size_t k = 0; k < D; ++k) x[k] = parse_num(cells[k + 1], where);
        pts.push_back(x);
    }
    return Configuration<D>(box, pts);
}

// ---------------------------------------------------------------- trajectories

template <std::size_t D>
std::string trajectory_csv(const Trajectory<D>& tr)
{
    std::string s = "t";
    for (std::size_t k = 1; k <= D; ++k) s += ",X" + std::to_string(k);
    for (std::size_t k = 1; k <= D; ++k) s += ",C" + std::to_string(k);
    s += ",n\n";
    for (std::size_t r = 0; r < tr.times.size(); ++r) {
        s += num(tr.times[r]);
        for (std::size_t k = 0; k < D; ++k) s += "," + num(tr.displacement[r][k]);
        for (std::size_t k = 0; k < D; ++k) s += "," + num(tr.compensator[r][k]);
        s += "," + std::to_string(tr.particle_count[r]) + "\n";
    }
    return s;
}

template <std::size_t D>
Trajectory<D> read_trajectory(const std::filesystem::path& path)
{
    const std::string where = path.string();
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    const auto head = split(line);
    const bool with_c = head.size() == 2 * D + 2;
    if ((!with_c && head.size() != D + 2) || head.front() != "t" || head.back() != "n") throw UsageError(where + ": bad header");
    Trajectory<D> tr;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = split(line);
        if (c.size() != head.size()) throw UsageError(where + ": bad row");
        tr.times.push_back(parse_num(c[0], where));
        Vec<D> x, m;
        for (std::size_t k = 0; k < D; ++k) x[k] = parse_num(c[1 + k], where);
        tr.displacement.push_back(x);
        if (with_c) {
            for (std::size_t k = 0; k < D; ++k) m[k] = parse_num(c[1 + D + k], where);
            tr.compensator.push_back(m);
        }
        tr.particle_count.push_back(static_cast<std::size_t>(parse_num(c.back(), where)));
    }
    if (tr.times.size() >= 2) tr.dt = tr.times[1] - tr.times[0];
    return tr;
}

// ---------------------------------------------------------------- reports

inline nlohmann::json to_json(const EstimatorReport& r)
{
    nlohmann::json d = nlohmann::json::object();
    for (const auto& [k, v] : r.details) d[k] = v;
    return {
        {"name", r.name},
        {"estimate", r.estimate},
        {"standard_error", r.standard_error},
        {"reference", r.reference},
        {"sample_count", r.sample_count},
        {"tolerance_rule", {{"kind", to_string(r.rule.kind)}, {"k", r.rule.k}, {"slack", r.rule.slack}, {"bound", r.rule.bound}}},
        {"pass", r.pass},
        {"details", d},
    };
}

inline RuleKind rule_kind_from(const std::string& s)
{
    for (RuleKind k : {RuleKind::WithinSE, RuleKind::NotBelowSE, RuleKind::AtLeast, RuleKind::AtMostTimes, RuleKind::AbsWithin, RuleKind::Decreasing})
        if (s == to_string(k)) return k;
    throw UsageError("unknown tolerance rule '" + s + "'");
}

/// Inverse of to_json; null entries (non-finite values) come back as NaN.
inline EstimatorReport report_from_json(const nlohmann::json& j)
{
    auto vec = [](const nlohmann::json& a) {
        std::vector<double> v;
        for (const auto& x : a) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
        return v;
    };
    EstimatorReport r;
    r.name = j.at("name").get<std::string>();
    r.estimate = vec(j.at("estimate"));
    r.standard_error = vec(j.at("standard_error"));
    r.reference = vec(j.at("reference"));
    r.sample_count = j.at("sample_count").get<std::size_t>();
    const auto& t = j.at("tolerance_rule");
    auto val = [](const nlohmann::json& x) { return x.is_null() ? -std::numeric_limits<double>::infinity() : x.get<double>(); };
    r.rule = {rule_kind_from(t.at("kind").get<std::string>()), val(t.at("k")), val(t.at("slack")), val(t.at("bound"))};
    r.pass = j.at("pass").get<bool>();
    for (const auto& [k, v] : j.at("details").items()) r.details[k] = v.is_null() ? std::nan("") : v.get<double>();
    return r;
}

inline std::string report_csv(const std::vector<EstimatorReport>& reps)
{
    std::string s = "estimator,estimate,stderr,pass\n";
    for (const auto& r : reps) {
        for (std::size_t c = 0; c < r.estimate.size(); ++c) {
            std::string name = r.name;
            if (r.estimate.size() > 1) name += "[" + std::to_string(c) + "]";
            const double se = c < r.standard_error.size() ? r.standard_error[c] : 0.0;
            s += name + "," + num(r.estimate[c]) + "," + num(se) + "," + (r.pass ? "true" : "false") + "\n";
        }
    }
    return s;
}

/// Reproducibility record written into every output directory.
inline nlohmann::json manifest(const std::string& stage, const nlohmann::json& resolved_config, std::uint64_t seed)
{
    return {
        {"tool", kToolName},
        {"version", kToolVersion},
        {"stage", stage},
        {"seed", seed},
        {"config_hash", fnv1a_hex(resolved_config.dump())},
        {"config", resolved_config},
    };
}

} // namespace tagdiff::io

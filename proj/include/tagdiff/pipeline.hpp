#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "tagdiff/audit.hpp"
#include "tagdiff/estimators.hpp"
#include "tagdiff/gibbs.hpp"
#include "tagdiff/io.hpp"
#include "tagdiff/run_config.hpp"

namespace tagdiff::pipeline {

namespace fs = std::filesystem;

enum ExitCode : int { Success = 0, RequiredCheckFailed = 1, InvalidInput = 2 };

inline std::string indexed(const char* stem, std::size_t i)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu", stem, i);
    return buf;
}

inline fs::path samples_dir(const RunConfig& c) { return fs::path(c.output_dir) / "samples"; }
inline fs::path trajectories_dir(const RunConfig& c) { return fs::path(c.output_dir) / "trajectories"; }
inline fs::path analysis_dir(const RunConfig& c) { return fs::path(c.output_dir) / "analysis"; }

inline void write_manifest(const fs::path& dir, const std::string& stage, const RunConfig& c)
{
    io::write_json(dir / "manifest.json", io::manifest(stage, c.source, c.seed));
}

inline int audit(const RunConfig& c)
{
    const auto report = audit_conditions(c.potential.build(c.dimension), c.audit_p);
    auto j = to_json(report);
    j["potential"] = {{"kind", c.potential.kind}, {"epsilon", c.potential.epsilon}, {"sigma", c.potential.sigma}, {"cutoff", c.potential.cutoff}};
    const fs::path dir(c.output_dir);
    io::write_json(dir / "audit.json", j);
    write_manifest(dir, "audit", c);
    return report.all_pass() ? Success : RequiredCheckFailed;
}

template <std::size_t D>
int sample(const RunConfig& c)
{
    const auto pot = c.potential.build(D);
    const TorusBox<D> box(c.side_length);
    RandomStream rng(derive_seed(c.seed, "sample"));
    const auto chain = sample_chain(c.gcmc_params(), pot, box, c.gcmc.burn_in, c.gcmc.samples, c.gcmc.thin, rng);
    const fs::path dir = samples_dir(c);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < chain.size(); ++i) io::write_snapshot(dir / indexed("sample", i), chain[i]);
    write_manifest(dir, "sample", c);
    return Success;
}

template <std::size_t D>
std::vector<Configuration<D>> read_samples(const RunConfig& c)
{
    std::vector<Configuration<D>> out;
    for (std::size_t i = 0;; ++i) {
        const fs::path stem = samples_dir(c) / indexed("sample", i);
        if (!fs::exists(stem.string() + ".csv")) break;
        out.push_back(io::read_snapshot<D>(stem));
    }
    if (out.empty()) throw UsageError("no samples in " + samples_dir(c).string() + "; run the sample stage first");
    return out;
}

/// Member i starts from sample i mod S with the tag at the origin.
template <std::size_t D>
int simulate(const RunConfig& c, std::size_t workers)
{
    const auto pot = c.potential.build(D);
    const auto samples = read_samples<D>(c);
    std::vector<CoupledState<D>> init;
    for (std::size_t i = 0; i < c.dynamics.ensemble; ++i) init.emplace_back(samples[i % samples.size()]);
    const auto ens = simulate_ensemble(init, c.dynamics.T, c.integrator(), pot, derive_seed(c.seed, "simulate"), workers);
    const fs::path dir = trajectories_dir(c);
    fs::create_directories(dir);
    // Single collector: files are written after all workers finish, in member order.
    nlohmann::json diag = nlohmann::json::array();
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const auto& tr = ens[i];
        io::write_text(dir / (indexed("traj", i) + ".csv"), io::trajectory_csv(tr));
        for (std::size_t s = 0; s < tr.snapshots.size(); ++s)
            io::write_snapshot(dir / (indexed("traj", i) + indexed("_snap", s)), tr.snapshots[s], tr.snapshot_times[s]);
        diag.push_back({{"member", i},
                        {"seed", tr.seed},
                        {"cap_events", tr.diagnostics.force.cap_events},
                        {"force_evaluations", tr.diagnostics.force.evaluations},
                        {"biased", tr.biased()}});
    }
    auto m = io::manifest("simulate", c.source, c.seed);
    m["members"] = diag;
    io::write_json(dir / "manifest.json", m);
    return Success;
}

template <std::size_t D>
std::vector<Trajectory<D>> read_trajectories(const RunConfig& c)
{
    std::vector<Trajectory<D>> out;
    for (std::size_t i = 0;; ++i) {
        const fs::path p = trajectories_dir(c) / (indexed("traj", i) + ".csv");
        if (!fs::exists(p)) break;
        out.push_back(io::read_trajectory<D>(p));
    }
    if (out.empty()) throw UsageError("no trajectories in " + trajectories_dir(c).string() + "; run the simulate stage first");
    return out;
}

template <std::size_t D>
std::vector<EstimatorReport> run_estimators(const RunConfig& c, std::size_t workers)
{
    const auto& a = c.analysis;
    const auto pot = c.potential.build(D);
    auto selected = [&](const char* name) { return std::find(a.estimators.begin(), a.estimators.end(), name) != a.estimators.end(); };
    std::vector<EstimatorReport> reps;
    auto add = [&](std::vector<EstimatorReport> v) {
        for (auto& r : v) reps.push_back(std::move(r));
    };

    const bool need_traj = selected("martingale") || selected("diffusion") || selected("scaling");
    const bool need_samples = selected("ibp") || selected("ibp_aggregate") || selected("symmetry") || selected("velocity");
    std::vector<Trajectory<D>> trajs;
    std::vector<Configuration<D>> samples;
    if (need_traj) trajs = read_trajectories<D>(c);
    if (need_samples) samples = read_samples<D>(c);

    if (selected("martingale")) {
        MartingaleOptions o;
        o.alpha = a.alpha;
        o.k_se = a.k_se;
        add(martingale_diagnostics(trajs, o));
    }
    if (selected("diffusion")) {
        std::vector<double> grid = a.diffusion_t_grid;
        if (grid.empty())
            for (int k = 1; k <= 4; ++k) grid.push_back(c.dynamics.T * k / 4.0);
        add(diffusion_reports(diffusion_matrix(trajs, grid), 0.99, a.k_se));
    }
    if (selected("scaling")) {
        ScalingOptions o;
        o.eps_grid = a.eps_grid;
        o.t_points = a.t_points;
        o.alpha = a.alpha;
        o.k_se = a.k_se;
        add(invariance_scaling_test(trajs, o).reports);
    }
    auto tag = [](EstimatorReport r, const std::string& s) {
        r.name += "[" + s + "]";
        return r;
    };
    if (selected("ibp"))
        for (const auto& [F, v] : a.ibp)
            reps.push_back(tag(ibp_check(build_cylinder<D>(c, F), build_field<D>(c, v), samples, pot, a.k_se), F + "," + v));
    if (selected("ibp_aggregate"))
        for (const auto& [F, G] : a.ibp_aggregate)
            reps.push_back(tag(ibp_aggregate_check(build_cylinder<D>(c, F), build_cylinder<D>(c, G), samples, pot, a.k_se), F + "," + G));
    if (selected("symmetry"))
        for (const auto& [F, G] : a.symmetry)
            reps.push_back(tag(generator_symmetry_check(build_cylinder<D>(c, F), build_cylinder<D>(c, G), samples, pot, a.k_se), F + "," + G));
    if (selected("velocity")) {
        VelocityOptions o;
        o.delta = a.velocity_delta;
        o.steps = a.velocity_steps;
        o.paths = a.velocity_paths;
        o.workers = workers;
        o.k_se = a.k_se;
        IntegratorParams p = c.integrator();
        for (std::size_t k = 0; k < std::min(a.velocity_configs, samples.size()); ++k)
            reps.push_back(tag(mean_forward_velocity(samples[k], pot, p, derive_seed(c.seed, "velocity", k), o), indexed("sample", k)));
    }
    return reps;
}

template <std::size_t D>
int analyze(const RunConfig& c, std::size_t workers)
{
    const auto reps = run_estimators<D>(c, workers);
    bool ok = true;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reps) {
        ok = ok && r.pass;
        arr.push_back(io::to_json(r));
    }
    nlohmann::json bundle = {
        {"manifest", io::manifest("analyze", c.source, c.seed)},
        {"dimension", D},
        {"in_theory", c.in_theory()},
        {"reports", arr},
        {"all_pass", ok},
    };
    if (!c.in_theory()) bundle["note"] = "d = 1 lies outside the ergodicity and scaling theory; results are descriptive only";
    const fs::path dir = analysis_dir(c);
    io::write_json(dir / "analysis.json", bundle);
    io::write_text(dir / "report.csv", io::report_csv(reps));
    write_manifest(dir, "analyze", c);
    return ok ? Success : RequiredCheckFailed;
}

template <std::size_t D>
int run_stage(const std::string& stage, const RunConfig& c, std::size_t workers)
{
    if (stage == "audit") return audit(c);
    if (stage == "sample") return sample<D>(c);
    if (stage == "simulate") return simulate<D>(c, workers);
    if (stage == "analyze") return analyze<D>(c, workers);
    if (stage == "pipeline") {
        int worst = Success;
        for (const char* s : {"audit", "sample", "simulate", "analyze"}) worst = std::max(worst, run_stage<D>(s, c, workers));
        return worst;
    }
    throw UsageError("unknown stage '" + stage + "'");
}

inline int run(const std::string& stage, const RunConfig& c, std::size_t workers)
{
    switch (c.dimension) {
    case 1: return run_stage<1>(stage, c, workers);
    case 2: return run_stage<2>(stage, c, workers);
    case 3: return run_stage<3>(stage, c, workers);
    }
    throw ConfigError("dimension", "must be 1, 2 or 3");
}

} // namespace tagdiff::pipeline

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tagdiff/io.hpp"
#include "tagdiff/pipeline.hpp"
#include "tagdiff/run_config.hpp"

namespace {

using tagdiff::ConfigError;
using tagdiff::UsageError;
namespace pl = tagdiff::pipeline;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    std::size_t workers = 1;
    std::vector<std::string> sets;
    // sample
    std::optional<double> z;
    std::optional<std::size_t> sweeps, samples, burn_in;
    // simulate
    std::optional<double> T, dt;
    std::optional<std::size_t> ensemble, stride, series_stride;
};

template <class V>
void put(nlohmann::json& j, const char* path, const std::optional<V>& v)
{
    if (v) tagdiff::apply_override(j, std::string(path) + "=" + nlohmann::json(*v).dump());
}

tagdiff::RunConfig load(const Options& o)
{
    nlohmann::json j = nlohmann::json::object();
    if (!o.config.empty()) {
        try {
            j = nlohmann::json::parse(tagdiff::io::read_text(o.config));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(o.config, std::string("not valid JSON: ") + e.what());
        } catch (const UsageError& e) {
            throw ConfigError(o.config, e.what());
        }
    }
    put(j, "seed", o.seed);
    put(j, "output_dir", o.output);
    put(j, "gcmc.activity", o.z);
    put(j, "gcmc.thin", o.sweeps);
    put(j, "gcmc.samples", o.samples);
    put(j, "gcmc.burn_in", o.burn_in);
    put(j, "dynamics.T", o.T);
    put(j, "dynamics.dt", o.dt);
    put(j, "dynamics.ensemble", o.ensemble);
    put(j, "dynamics.record_stride", o.stride);
    put(j, "dynamics.series_stride", o.series_stride);
    for (const auto& s : o.sets) tagdiff::apply_override(j, s);
    return tagdiff::parse_config(j);
}

void common_flags(CLI::App* s, Options& o)
{
    s->add_option("-c,--config", o.config, "run configuration (JSON)");
    s->add_option("--seed", o.seed, "master seed");
    s->add_option("-o,--output", o.output, "output directory");
    s->add_option("-j,--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
    s->add_option("--set", o.sets, "override a config field, key.path=value (repeatable)");
}

void sample_flags(CLI::App* s, Options& o)
{
    s->add_option("--z", o.z, "activity");
    s->add_option("--sweeps", o.sweeps, "sweeps between stored samples");
    s->add_option("--samples", o.samples, "number of stored samples");
    s->add_option("--burn-in", o.burn_in, "burn-in sweeps");
}

void simulate_flags(CLI::App* s, Options& o)
{
    s->add_option("--T", o.T, "time horizon");
    s->add_option("--dt", o.dt, "step size");
    s->add_option("--ensemble", o.ensemble, "number of trajectories");
    s->add_option("--stride", o.stride, "steps between environment snapshots");
    s->add_option("--series-stride", o.series_stride, "steps between trajectory rows");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Tagged-particle diffusion toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tagdiff::io::kToolVersion);
    Options o;

    auto* audit = app.add_subcommand("audit", "check the potential's regularity conditions");
    auto* sample = app.add_subcommand("sample", "draw grand-canonical environments");
    auto* simulate = app.add_subcommand("simulate", "run the coupled dynamics from stored samples");
    auto* analyze = app.add_subcommand("analyze", "run the selected estimators");
    auto* pipeline = app.add_subcommand("pipeline", "audit, sample, simulate and analyze in one go");
    for (auto* s : {audit, sample, simulate, analyze, pipeline}) common_flags(s, o);
    sample_flags(sample, o);
    sample_flags(pipeline, o);
    simulate_flags(simulate, o);
    simulate_flags(pipeline, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : pl::InvalidInput;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        const auto cfg = load(o);
        const int rc = pl::run(stage, cfg, o.workers);
        if (rc != pl::Success) std::fprintf(stderr, "%s: a required check failed (see %s)\n", stage.c_str(), cfg.output_dir.c_str());
        return rc;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return pl::InvalidInput;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return pl::InvalidInput;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 3;
    }
}

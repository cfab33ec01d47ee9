#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "tagdiff/cylinder.hpp"
#include "tagdiff/dynamics.hpp"
#include "tagdiff/errors.hpp"
#include "tagdiff/gibbs.hpp"
#include "tagdiff/potential.hpp"

namespace tagdiff {

struct PotentialSpec {
    std::string kind = "lennard_jones";
    double epsilon = 1.0;
    double sigma = 1.0;
    /// 0 means untruncated.
    double cutoff = 2.5;

    PairPotential build(std::size_t d) const
    {
        PairPotential p;
        switch (potential_kind_from_string(kind)) {
        case PotentialKind::LennardJones: p = PairPotential::lennard_jones(epsilon, sigma, d); break;
        case PotentialKind::SmoothBump: p = PairPotential::smooth_bump(epsilon, sigma, d); break;
        case PotentialKind::Zero: return PairPotential::zero(d);
        }
        return cutoff > 0.0 ? p.truncate_and_shift(cutoff) : p;
    }
};

struct GcmcSpec {
    double activity = 0.26;
    std::size_t burn_in = 200;
    std::size_t thin = 5;
    std::size_t samples = 20;
    std::array<double, 3> move_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double displacement_scale = 0.5;
};

struct DynamicsSpec {
    double dt = 1e-4;
    double T = 1.0;
    std::size_t ensemble = 10;
    /// Steps between trajectory CSV rows.
    std::size_t series_stride = 1;
    /// Steps between environment snapshots (when kept).
    std::size_t record_stride = 100;
    bool keep_snapshots = false;
    Engine engine = Engine::Absolute;
    Scheme scheme = Scheme::EulerMaruyama;
    double f_max = 1e6;
};

struct TestFunctionSpec {
    std::string primitive;
    double amplitude = 1.0;
    std::vector<double> center;
    std::vector<double> half;
    double margin = 0.5;
    double width = 1.0;
    std::size_t axis = 0;
};

struct OuterSpec {
    std::string kind = "linear";
    std::vector<double> a;
    double b = 0.0;
};

struct CylinderSpec {
    OuterSpec outer;
    std::vector<std::string> inner;
};

struct FieldTermSpec {
    std::vector<double> direction;
    std::string test;
};

struct AnalysisSpec {
    std::vector<std::string> estimators{"martingale", "diffusion"};
    std::vector<double> diffusion_t_grid;
    std::vector<double> eps_grid{1.0, 0.5};
    std::vector<double> t_points{0.25, 0.5, 0.75, 1.0};
    std::vector<std::pair<std::string, std::string>> ibp, ibp_aggregate, symmetry;
    double velocity_delta = 1e-6;
    std::size_t velocity_steps = 10;
    std::size_t velocity_configs = 2;
    std::size_t velocity_paths = 2000;
    double alpha = 0.01;
    double k_se = 3.0;
};

inline const std::set<std::string>& known_estimators()
{
    static const std::set<std::string> s{"martingale", "diffusion", "scaling", "ibp", "ibp_aggregate", "symmetry", "velocity"};
    return s;
}

struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t dimension = 2;
    double side_length = 10.0;
    PotentialSpec potential;
    std::vector<double> audit_p{2.0, 4.0};
    GcmcSpec gcmc;
    DynamicsSpec dynamics;
    std::map<std::string, TestFunctionSpec> tests;
    std::map<std::string, CylinderSpec> cylinders;
    std::map<std::string, std::vector<FieldTermSpec>> fields;
    AnalysisSpec analysis;
    std::string output_dir = "run";
    /// The validated input, used for manifests.
    nlohmann::json source;

    IntegratorParams integrator() const
    {
        IntegratorParams p;
        p.dt = dynamics.dt;
        p.engine = dynamics.engine;
        p.scheme = dynamics.scheme;
        p.series_stride = dynamics.series_stride;
        p.record_stride = dynamics.record_stride;
        p.keep_snapshots = dynamics.keep_snapshots;
        p.f_max = dynamics.f_max;
        return p;
    }

    GcmcParams gcmc_params() const
    {
        GcmcParams g;
        g.activity = gcmc.activity;
        g.move_mix = gcmc.move_mix;
        g.displacement_scale = gcmc.displacement_scale;
        return g;
    }

    /// The analysis only has theory behind it for d >= 2.
    bool in_theory() const { return dimension >= 2; }
};

namespace detail {

/// Field-path aware accessor over one JSON object; rejects keys it was not asked about.
class Fields {
public:
    Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return j_.contains(key); }

    const nlohmann::json& raw(const std::string& key)
    {
        seen_.insert(key);
        return j_.at(key);
    }

    template <class T>
    T get(const std::string& key, const T& fallback)
    {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return convert<T>(j_.at(key), at(key));
    }

    template <class T>
    T require(const std::string& key)
    {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError(at(key), "required field is missing");
        return convert<T>(j_.at(key), at(key));
    }

    Fields sub(const std::string& key)
    {
        seen_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        return Fields(j_.contains(key) ? j_.at(key) : empty, at(key));
    }

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(at(k), "unknown field");
    }

private:
    template <class T>
    static T convert(const nlohmann::json& v, const std::string& where)
    {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(where, "must be a number");
            } else if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, std::size_t>) {
                if (!v.is_number_unsigned()) throw ConfigError(where, "must be a nonnegative integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(where, "must be true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(where, "must be a string");
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                if (!v.is_array()) throw ConfigError(where, "must be an array of numbers");
                for (const auto& x : v)
                    if (!x.is_number()) throw ConfigError(where, "must be an array of numbers");
            } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                if (!v.is_array()) throw ConfigError(where, "must be an array of strings");
                for (const auto& x : v)
                    if (!x.is_string()) throw ConfigError(where, "must be an array of strings");
            }
            return v.get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where, e.what());
        }
    }

    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void positive(double v, const std::string& where)
{
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(where, "must be positive and finite");
}

inline std::vector<std::pair<std::string, std::string>> pairs(Fields& f, const std::string& key, const char* a, const char* b)
{
    std::vector<std::pair<std::string, std::string>> out;
    if (!f.has(key)) return out;
    const auto& arr = f.raw(key);
    if (!arr.is_array()) throw ConfigError(f.at(key), "must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        Fields e(arr[i], f.at(key) + "[" + std::to_string(i) + "]");
        out.emplace_back(e.require<std::string>(a), e.require<std::string>(b));
        e.finish();
    }
    return out;
}

} // namespace detail

/// Parses and validates a run configuration. Errors carry the dotted path of the field.
inline RunConfig parse_config(const nlohmann::json& j)
{
    using detail::Fields;
    using detail::positive;
    RunConfig c;
    c.source = j;
    Fields root(j, "");
    c.seed = root.require<std::uint64_t>("seed");
    c.dimension = root.get<std::size_t>("dimension", 2);
    if (c.dimension < 1 || c.dimension > 3) throw ConfigError("dimension", "must be 1, 2 or 3");
    c.output_dir = root.get<std::string>("output_dir", c.output_dir);

    {
        auto b = root.sub("box");
        c.side_length = b.get<double>("side_length", c.side_length);
        positive(c.side_length, "box.side_length");
        b.finish();
    }
    {
        auto p = root.sub("potential");
        c.potential.kind = p.get<std::string>("kind", c.potential.kind);
        c.potential.epsilon = p.get<double>("epsilon", c.potential.epsilon);
        c.potential.sigma = p.get<double>("sigma", c.potential.sigma);
        c.potential.cutoff = p.get<double>("cutoff", c.potential.cutoff);
        p.finish();
        try {
            const auto pot = c.potential.build(c.dimension);
            if (!pot.is_zero()) {
                if (!std::isfinite(pot.interaction_range())) throw ConfigError("potential.cutoff", "an untruncated potential cannot run on a torus");
                if (pot.interaction_range() > 0.5 * c.side_length) throw ConfigError("potential.cutoff", "interaction range exceeds half the box side");
            }
        } catch (const UsageError& e) {
            throw ConfigError("potential", e.what());
        }
    }
    {
        auto a = root.sub("audit");
        c.audit_p = a.get<std::vector<double>>("p_values", c.audit_p);
        for (double p : c.audit_p)
            if (!(p >= 1.0)) throw ConfigError("audit.p_values", "entries must be >= 1");
        a.finish();
    }
    {
        auto g = root.sub("gcmc");
        c.gcmc.activity = g.get<double>("activity", c.gcmc.activity);
        if (!(c.gcmc.activity >= 0.0)) throw ConfigError("gcmc.activity", "must be >= 0");
        c.gcmc.burn_in = g.get<std::size_t>("burn_in", c.gcmc.burn_in);
        c.gcmc.thin = g.get<std::size_t>("thin", c.gcmc.thin);
        c.gcmc.samples = g.get<std::size_t>("samples", c.gcmc.samples);
        if (c.gcmc.samples == 0) throw ConfigError("gcmc.samples", "must be >= 1");
        if (g.has("move_mix")) {
            const auto m = g.get<std::vector<double>>("move_mix", {});
            if (m.size() != 3) throw ConfigError("gcmc.move_mix", "must have three entries (birth, death, displacement)");
            c.gcmc.move_mix = {m[0], m[1], m[2]};
        }
        c.gcmc.displacement_scale = g.get<double>("displacement_scale", c.gcmc.displacement_scale);
        g.finish();
        try {
            c.gcmc_params().validate();
        } catch (const UsageError& e) {
            throw ConfigError("gcmc", e.what());
        }
    }
    {
        auto d = root.sub("dynamics");
        auto& s = c.dynamics;
        s.dt = d.get<double>("dt", s.dt);
        positive(s.dt, "dynamics.dt");
        s.T = d.get<double>("T", s.T);
        if (!(s.T >= 0.0)) throw ConfigError("dynamics.T", "must be >= 0");
        s.ensemble = d.get<std::size_t>("ensemble", s.ensemble);
        s.series_stride = d.get<std::size_t>("series_stride", s.series_stride);
        s.record_stride = d.get<std::size_t>("record_stride", s.record_stride);
        if (s.series_stride == 0) throw ConfigError("dynamics.series_stride", "must be >= 1");
        if (s.record_stride == 0) throw ConfigError("dynamics.record_stride", "must be >= 1");
        s.keep_snapshots = d.get<bool>("keep_snapshots", s.keep_snapshots);
        const auto engine = d.get<std::string>("engine", "absolute");
        if (engine == "absolute") s.engine = Engine::Absolute;
        else if (engine == "relative") s.engine = Engine::Relative;
        else throw ConfigError("dynamics.engine", "must be 'absolute' or 'relative'");
        const auto scheme = d.get<std::string>("scheme", "euler_maruyama");
        if (scheme == "euler_maruyama") s.scheme = Scheme::EulerMaruyama;
        else if (scheme == "substep_adaptive") s.scheme = Scheme::SubstepAdaptive;
        else throw ConfigError("dynamics.scheme", "must be 'euler_maruyama' or 'substep_adaptive'");
        s.f_max = d.get<double>("f_max", s.f_max);
        positive(s.f_max, "dynamics.f_max");
        d.finish();
        try {
            step_count(s.T, s.dt);
        } catch (const UsageError& e) {
            throw ConfigError("dynamics.T", e.what());
        }
    }
    {
        auto fn = root.sub("functionals");
        if (fn.has("tests")) {
            if (!fn.raw("tests").is_object()) throw ConfigError("functionals.tests", "must be an object");
            for (const auto& [name, v] : fn.raw("tests").items()) {
                Fields t(v, "functionals.tests." + name);
                TestFunctionSpec s;
                s.primitive = t.require<std::string>("primitive");
                s.amplitude = t.get<double>("amplitude", 1.0);
                s.margin = t.get<double>("margin", 0.5);
                positive(s.margin, t.at("margin"));
                if (s.primitive == "bump" || s.primitive == "smooth-coordinate" || s.primitive == "gaussian-clipped") {
                    s.center = t.get<std::vector<double>>("center", std::vector<double>(c.dimension, 0.0));
                    s.half = t.require<std::vector<double>>("half");
                    if (s.center.size() != c.dimension) throw ConfigError(t.at("center"), "length must equal the dimension");
                    if (s.half.size() != c.dimension) throw ConfigError(t.at("half"), "length must equal the dimension");
                    for (double h : s.half) positive(h, t.at("half"));
                } else {
                    throw ConfigError(t.at("primitive"), "must be bump, smooth-coordinate or gaussian-clipped");
                }
                if (s.primitive == "smooth-coordinate") {
                    s.axis = t.require<std::size_t>("axis");
                    if (s.axis >= c.dimension) throw ConfigError(t.at("axis"), "out of range");
                }
                if (s.primitive == "gaussian-clipped") {
                    s.width = t.require<double>("width");
                    positive(s.width, t.at("width"));
                }
                t.finish();
                // The support must fit inside the torus.
                for (std::size_t k = 0; k < c.dimension; ++k)
                    if (std::fabs(s.center[k]) + s.half[k] + s.margin >= 0.5 * c.side_length)
                        throw ConfigError("functionals.tests." + name, "support does not fit inside the box");
                c.tests[name] = s;
            }
        }
        if (fn.has("cylinders")) {
            if (!fn.raw("cylinders").is_object()) throw ConfigError("functionals.cylinders", "must be an object");
            for (const auto& [name, v] : fn.raw("cylinders").items()) {
                Fields cy(v, "functionals.cylinders." + name);
                CylinderSpec s;
                s.inner = cy.require<std::vector<std::string>>("inner");
                for (const auto& t : s.inner)
                    if (!c.tests.count(t)) throw ConfigError(cy.at("inner"), "undeclared test function '" + t + "'");
                auto o = cy.sub("outer");
                s.outer.kind = o.require<std::string>("kind");
                s.outer.a = o.get<std::vector<double>>("a", {});
                s.outer.b = o.get<double>("b", 0.0);
                o.finish();
                const auto& k = s.outer.kind;
                if (k == "linear" || k == "sine" || k == "tanh" || k == "gaussian") {
                    if (s.outer.a.size() != s.inner.size()) throw ConfigError(o.at("a"), "needs one coefficient per inner test function");
                } else if (k == "ratio") {
                    if (s.inner.size() != 2) throw ConfigError(cy.at("inner"), "ratio takes two test functions");
                    positive(s.outer.b, o.at("b"));
                } else if (k == "product") {
                    if (s.inner.size() != 2) throw ConfigError(cy.at("inner"), "product takes two test functions");
                } else if (k == "constant") {
                    if (!s.inner.empty()) throw ConfigError(cy.at("inner"), "constant takes no test functions");
                } else {
                    throw ConfigError(o.at("kind"), "must be linear, sine, tanh, gaussian, ratio, product or constant");
                }
                cy.finish();
                c.cylinders[name] = s;
            }
        }
        if (fn.has("fields")) {
            if (!fn.raw("fields").is_object()) throw ConfigError("functionals.fields", "must be an object");
            for (const auto& [name, v] : fn.raw("fields").items()) {
                const std::string where = "functionals.fields." + name;
                if (!v.is_array() || v.empty()) throw ConfigError(where, "must be a non-empty array of terms");
                std::vector<FieldTermSpec> terms;
                for (std::size_t i = 0; i < v.size(); ++i) {
                    Fields t(v[i], where + "[" + std::to_string(i) + "]");
                    FieldTermSpec s;
                    s.direction = t.require<std::vector<double>>("direction");
                    s.test = t.require<std::string>("test");
                    if (s.direction.size() != c.dimension) throw ConfigError(t.at("direction"), "length must equal the dimension");
                    if (!c.tests.count(s.test)) throw ConfigError(t.at("test"), "undeclared test function '" + s.test + "'");
                    t.finish();
                    terms.push_back(s);
                }
                c.fields[name] = terms;
            }
        }
        fn.finish();
    }
    {
        auto a = root.sub("analysis");
        auto& s = c.analysis;
        s.estimators = a.get<std::vector<std::string>>("estimators", s.estimators);
        for (const auto& e : s.estimators)
            if (!known_estimators().count(e)) throw ConfigError("analysis.estimators", "unknown estimator '" + e + "'");
        s.diffusion_t_grid = a.get<std::vector<double>>("diffusion_t_grid", s.diffusion_t_grid);
        for (double t : s.diffusion_t_grid) {
            positive(t, "analysis.diffusion_t_grid");
            if (t > c.dynamics.T * (1 + 1e-12)) throw ConfigError("analysis.diffusion_t_grid", "times must lie within [0, dynamics.T]");
        }
        s.eps_grid = a.get<std::vector<double>>("eps_grid", s.eps_grid);
        s.t_points = a.get<std::vector<double>>("t_points", s.t_points);
        for (double e : s.eps_grid) positive(e, "analysis.eps_grid");
        for (double t : s.t_points) positive(t, "analysis.t_points");
        s.ibp = detail::pairs(a, "ibp", "F", "v");
        s.ibp_aggregate = detail::pairs(a, "ibp_aggregate", "F", "G");
        s.symmetry = detail::pairs(a, "symmetry", "F", "G");
        for (const auto& [F, v] : s.ibp) {
            if (!c.cylinders.count(F)) throw ConfigError("analysis.ibp", "undeclared cylinder function '" + F + "'");
            if (!c.fields.count(v)) throw ConfigError("analysis.ibp", "undeclared vector field '" + v + "'");
        }
        for (const auto* list : {&s.ibp_aggregate, &s.symmetry})
            for (const auto& [F, G] : *list)
                if (!c.cylinders.count(F) || !c.cylinders.count(G))
                    throw ConfigError(list == &s.symmetry ? "analysis.symmetry" : "analysis.ibp_aggregate", "undeclared cylinder function");
        s.velocity_delta = a.get<double>("velocity_delta", s.velocity_delta);
        positive(s.velocity_delta, "analysis.velocity_delta");
        s.velocity_steps = a.get<std::size_t>("velocity_steps", s.velocity_steps);
        if (s.velocity_steps == 0) throw ConfigError("analysis.velocity_steps", "must be >= 1");
        s.velocity_configs = a.get<std::size_t>("velocity_configs", s.velocity_configs);
        s.velocity_paths = a.get<std::size_t>("velocity_paths", s.velocity_paths);
        s.alpha = a.get<double>("alpha", s.alpha);
        if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw ConfigError("analysis.alpha", "must lie in (0, 1)");
        s.k_se = a.get<double>("k_se", s.k_se);
        positive(s.k_se, "analysis.k_se");
        a.finish();
    }
    root.finish();
    return c;
}

/// Applies `a.b.c=value` to the raw JSON before validation. The value is read as JSON when
/// it parses, otherwise as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key.path=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    nlohmann::json* node = &j;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError(path, "empty key in override");
        if (!node->is_object()) throw ConfigError(path, "override walks through a non-object");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = nlohmann::json::object();
        start = dot + 1;
    }
}

// ---------------------------------------------------------------- functional builders

template <std::size_t D>
Vec<D> to_vec(const std::vector<double>& v)
{
    Vec<D> x = zero_vec<D>();
    for (std::size_t k = 0; k < D && k < v.size(); ++k) x[k] = v[k];
    return x;
}

template <std::size_t D>
TestFunction<D> build_test(const TestFunctionSpec& s)
{
    const Vec<D> c = to_vec<D>(s.center), h = to_vec<D>(s.half);
    if (s.primitive == "bump") return TestFunction<D>::bump(s.amplitude, c, h, s.margin);
    if (s.primitive == "smooth-coordinate") return TestFunction<D>::smooth_coordinate(s.axis, c, h, s.margin, s.amplitude);
    return TestFunction<D>::gaussian_clipped(s.amplitude, c, s.width, h, s.margin);
}

template <std::size_t D>
CylinderFunction<D> build_cylinder(const RunConfig& c, const std::string& name)
{
    const auto& s = c.cylinders.at(name);
    std::vector<TestFunction<D>> inner;
    for (const auto& t : s.inner) inner.push_back(build_test<D>(c.tests.at(t)));
    const auto& o = s.outer;
    OuterFunction g = OuterFunction::constant(o.b);
    if (o.kind == "linear") g = OuterFunction::linear(o.a, o.b);
    else if (o.kind == "sine") g = OuterFunction::sine(o.a, o.b);
    else if (o.kind == "tanh") g = OuterFunction::tanh(o.a, o.b);
    else if (o.kind == "gaussian") g = OuterFunction::gaussian(o.a);
    else if (o.kind == "ratio") g = OuterFunction::ratio(o.b);
    else if (o.kind == "product") g = OuterFunction::product();
    return CylinderFunction<D>(g, inner);
}

template <std::size_t D>
VectorField<D> build_field(const RunConfig& c, const std::string& name)
{
    VectorField<D> v;
    for (const auto& t : c.fields.at(name)) v.add(to_vec<D>(t.direction), build_test<D>(c.tests.at(t.test)));
    return v;
}

} // namespace tagdiff

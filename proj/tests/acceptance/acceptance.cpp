// Acceptance gate: one PASS/FAIL line per criterion on stdout, evidence in
// acceptance_report.json. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/poisson.hpp>

#include "json.hpp"

#include "tagdiff/tagdiff.hpp"

using namespace tagdiff;
using nlohmann::json;
using V2 = Vec<2>;

namespace {

const TorusBox<2> kBox(10.0);
const PairPotential kLJ = PairPotential::lennard_jones(1, 1, 2).truncate_and_shift(2.5);
const PairPotential kFree = PairPotential::zero(2);
constexpr double kActivity = 0.26; // density ~0.3 with the tag field on
constexpr std::uint64_t kSeed = 20240611;

std::size_t workers()
{
    const unsigned h = std::thread::hardware_concurrency();
    return h == 0 ? 1 : h;
}

struct Outcome {
    bool pass = true;
    std::string summary;
    json evidence = json::object();

    void require(const EstimatorReport& r)
    {
        pass = pass && r.pass;
        evidence["reports"].push_back(io::to_json(r));
    }
    void require(const std::vector<EstimatorReport>& rs)
    {
        for (const auto& r : rs) require(r);
    }
    void check(const std::string& what, bool ok, json value)
    {
        pass = pass && ok;
        evidence["checks"].push_back({{"check", what}, {"pass", ok}, {"value", std::move(value)}});
    }
};

std::vector<Configuration<2>> gcmc_samples(std::size_t count, std::size_t thin, std::uint64_t seed, const PairPotential& pot = kLJ,
                                           double z = kActivity)
{
    GcmcParams g;
    g.activity = z;
    RandomStream rng(seed);
    return sample_chain(g, pot, kBox, 300, count, thin, rng);
}

std::vector<CoupledState<2>> starts(const std::vector<Configuration<2>>& s)
{
    std::vector<CoupledState<2>> out;
    for (const auto& c : s) out.emplace_back(c);
    return out;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// ---------------------------------------------------------------- 1

Outcome free_particle_calibration()
{
    Outcome o;
    IntegratorParams p;
    p.series_stride = 100;
    const auto init = starts(gcmc_samples(500, 2, derive_seed(kSeed, "c1.sample"), kFree, 0.3));
    const auto ens = simulate_ensemble(init, 1.0, p, kFree, derive_seed(kSeed, "c1.simulate"), workers());
    const auto D = diffusion_matrix(ens, {0.25, 0.5, 0.75, 1.0});
    EstimatorReport r;
    r.name = "calibration.diffusion_matrix_is_2I";
    r.sample_count = ens.size();
    r.estimate = {D.matrix.begin(), D.matrix.end()};
    r.standard_error = {D.standard_error.begin(), D.standard_error.end()};
    r.reference = {2.0, 0.0, 0.0, 2.0};
    r.rule = ToleranceRule::within_se(3.0);
    o.require(r.finalize());
    for (const auto& m : martingale_diagnostics(ens))
        if (m.name == "martingale.qv_slope") o.require(m);
    o.summary = fmt("D = [%.3f %.3f; . %.3f]", D.matrix[0], D.matrix[1], D.matrix[3]) + fmt(", se %.3f, %g trajectories", D.standard_error[0], ens.size());
    return o;
}

// ---------------------------------------------------------------- 2

Outcome frame_equivalence()
{
    Outcome o;
    const auto samples = gcmc_samples(50, 4, derive_seed(kSeed, "c2.sample"));
    IntegratorParams p;
    const Quantizer q = Quantizer::for_box(kBox.side_length, true);
    double worst = 0.0;
    std::size_t tag_mismatch = 0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        std::vector<V2> env;
        for (std::size_t i = 0; i < samples[s].size(); ++i) env.push_back(q(samples[s][i]));
        CoupledState<2> st{Configuration<2>(kBox, env)};
        st.xi = q(V2{0.37 * static_cast<double>(s) - 4.0, 1.25});
        std::vector<V2> abs{st.xi};
        for (const auto& y : env) abs.push_back(kBox.wrap(st.xi + y));
        Configuration<2> full(kBox, abs);
        RandomStream ra(derive_seed(kSeed, "c2.path", s)), rb(derive_seed(kSeed, "c2.path", s));
        for (int k = 0; k < 100; ++k) {
            step_full(full, p, kLJ, ra);
            step_coupled(st, p, kLJ, rb);
            tag_mismatch += !(st.xi == full[0]);
            for (std::size_t i = 0; i < env.size(); ++i) worst = std::max(worst, max_abs(min_image(kBox, full[i + 1], full[0]) - st.env[i]));
        }
    }
    o.check("max |transformed step_full - step_coupled|", worst == 0.0, worst);
    o.check("tag position mismatches", tag_mismatch == 0, tag_mismatch);

    // The two coupled engines must agree bit for bit as well.
    IntegratorParams pr;
    pr.engine = Engine::Relative;
    std::size_t engine_mismatch = 0;
    for (std::size_t s = 0; s < 5; ++s) {
        const CoupledState<2> st{samples[s]};
        const auto a = simulate_trajectory(st, 0.01, p, kLJ, s);
        const auto b = simulate_trajectory(st, 0.01, pr, kLJ, s);
        engine_mismatch += !(a.displacement == b.displacement && a.final_state.env == b.final_state.env);
    }
    o.check("absolute vs relative engine mismatches", engine_mismatch == 0, engine_mismatch);
    o.summary = fmt("max discrepancy %g over 50 seeds x 100 steps", worst);
    return o;
}

// ---------------------------------------------------------------- 3

double log_rel(double la, double lb)
{
    if (la < -700.0 && lb < -700.0) return 0.0;
    return std::fabs(std::expm1(la - lb));
}

Outcome gcmc_correctness()
{
    Outcome o;
    {
        GcmcParams p;
        p.activity = 0.5;
        RandomStream rng(derive_seed(kSeed, "c3.poisson"));
        const auto chain = sample_chain(p, kFree, kBox, 200, 4000, 20, rng);
        const double mu = p.activity * kBox.volume();
        const boost::math::poisson_distribution<double> pois(mu);
        // Pool the tails so every expected cell holds at least 5.
        std::vector<double> obs, exp;
        std::size_t lo = 0, hi = 0;
        while (4000.0 * boost::math::cdf(pois, static_cast<double>(lo)) < 5.0) ++lo;
        hi = lo;
        while (4000.0 * boost::math::cdf(boost::math::complement(pois, static_cast<double>(hi))) >= 5.0) ++hi;
        obs.assign(hi - lo + 1, 0.0);
        for (const auto& c : chain) obs[std::clamp(c.size(), lo, hi) - lo] += 1.0;
        for (std::size_t k = lo; k <= hi; ++k) {
            double pk = boost::math::pdf(pois, static_cast<double>(k));
            if (k == lo) pk = boost::math::cdf(pois, static_cast<double>(lo));
            if (k == hi) pk = boost::math::cdf(boost::math::complement(pois, static_cast<double>(hi - 1)));
            exp.push_back(4000.0 * pk);
        }
        const auto t = stats::chi_square_gof(obs, exp);
        o.check("ideal gas count chi-square p-value >= 0.01", t.p_value >= 0.01, {{"chi2", t.statistic}, {"df", t.df}, {"p", t.p_value}});
        o.summary = fmt("Poisson p=%.3f", t.p_value);
    }
    {
        const std::vector<double> h = {0.3, -0.4};
        const double J = 0.8, z = 0.9;
        const double w[4] = {1.0, z * std::exp(-h[0]), z * std::exp(-h[1]), z * z * std::exp(-h[0] - h[1] - J)};
        const double Z = w[0] + w[1] + w[2] + w[3];
        SiteModel m(h, J);
        GcmcParams p;
        p.activity = z;
        RandomStream rng(derive_seed(kSeed, "c3.toy"));
        for (int k = 0; k < 1000; ++k) metropolis_move(m, p, rng);
        std::vector<std::vector<double>> ind(4);
        for (int k = 0; k < 400000; ++k) {
            metropolis_move(m, p, rng);
            const auto s = m.state();
            for (std::size_t j = 0; j < 4; ++j) ind[j].push_back(s == j ? 1.0 : 0.0);
        }
        EstimatorReport r;
        r.name = "gcmc.two_site_enumeration";
        r.sample_count = 400000;
        for (std::size_t j = 0; j < 4; ++j) {
            r.estimate.push_back(stats::mean(ind[j]));
            r.standard_error.push_back(stats::batch_means_se(ind[j], 50));
            r.reference.push_back(w[j] / Z);
        }
        r.rule = ToleranceRule::within_se(3.0);
        o.require(r.finalize());
    }
    {
        const std::vector<std::vector<V2>> states = {{}, {{1.3, 0.2}}, {{1.3, 0.2}, {-0.9, 1.1}}, {{1.3, 0.2}, {-0.9, 1.1}, {2.0, -2.2}}};
        const std::vector<V2> newcomers = {{1.05, 0.1}, {-3.0, 4.0}, {0.0, 1.2}, {2.2, 1.4}};
        double worst = 0.0;
        for (const std::array<double, 3>& mix : {std::array<double, 3>{1.0 / 3, 1.0 / 3, 1.0 / 3}, std::array<double, 3>{0.5, 0.2, 0.3}}) {
            for (double z : {0.26, 1.7}) {
                GcmcParams p;
                p.activity = z;
                p.move_mix = mix;
                for (const auto& pts : states) {
                    Configuration<2> g(kBox, pts);
                    for (const auto& x : newcomers) {
                        Configuration<2> gx = g;
                        gx.add(x);
                        const double n = static_cast<double>(g.size());
                        const double dU = kLJ.evaluate(x) + local_energy(g, x, kLJ);
                        const double ab = birth_acceptance(z, kBox.volume(), g.size(), dU, mix[1] / mix[0]);
                        const double ad = death_acceptance(z, kBox.volume(), gx.size(), dU, mix[0] / mix[1]);
                        worst = std::max(worst, log_rel(log_gibbs_weight(g, p, kLJ) + std::log(mix[0] / kBox.volume() * ab),
                                                        log_gibbs_weight(gx, p, kLJ) + std::log(mix[1] / (n + 1.0) * ad)));
                    }
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        Configuration<2> moved = g;
                        moved.move_to(i, newcomers[i]);
                        const double uo = kLJ.evaluate(g[i]) + local_energy(g, g[i], kLJ, i);
                        const double un = kLJ.evaluate(moved[i]) + local_energy(g, moved[i], kLJ, i);
                        worst = std::max(worst, log_rel(log_gibbs_weight(g, p, kLJ) + std::log(displacement_acceptance(uo, un)),
                                                        log_gibbs_weight(moved, p, kLJ) + std::log(displacement_acceptance(un, uo))));
                    }
                }
            }
        }
        o.check("detailed balance relative error <= 1e-12", worst <= 1e-12, worst);
        o.summary += fmt(", detailed balance err %.1e", worst);
    }
    return o;
}

// ---------------------------------------------------------------- 4, 5

struct Functionals {
    std::vector<CylinderFunction<2>> F, G;
    std::vector<VectorField<2>> v;
};

Functionals functionals()
{
    using T = TestFunction<2>;
    using O = OuterFunction;
    Functionals f;
    const T b1 = T::bump(1.5, {0.5, -0.5}, {1.0, 0.5}, 0.8);
    const T g1 = T::gaussian_clipped(2.0, {-1.0, 0.5}, 0.7, {1.0, 1.0}, 1.0);
    const T s0 = T::smooth_coordinate(0, {0.0, 0.5}, {1.5, 1.5}, 0.6);
    const T s1 = T::smooth_coordinate(1, {1.0, 0.0}, {1.0, 2.0}, 0.5, 0.8);
    const T b2 = T::bump(1.0, {-2.0, -1.5}, {1.0, 1.0}, 0.7);
    const T g2 = T::gaussian_clipped(1.0, {2.0, 2.0}, 1.0, {1.5, 1.5}, 0.8);
    const T far = T::bump(1.0, {3.0, -3.0}, {0.8, 0.8}, 0.6);

    f.F = {CylinderFunction<2>(O::sine({0.7, -0.4}, 0.3), {b1, g1}), CylinderFunction<2>(O::tanh({0.5}, 0.1), {s0}),
           CylinderFunction<2>(O::gaussian({0.3, 0.2}), {b2, g2}), CylinderFunction<2>(O::ratio(1.0), {g1, b1}),
           CylinderFunction<2>(O::product(), {s1, far})};
    f.G = {CylinderFunction<2>(O::tanh({0.5}, 0.1), {s0}), CylinderFunction<2>(O::linear({1.0, -0.5}, 0.2), {g2, b1}),
           CylinderFunction<2>(O::sine({0.4}, 0.0), {s1}), CylinderFunction<2>(O::product(), {b2, g1}),
           CylinderFunction<2>(O::gaussian({0.5}), {far})};
    auto field = [](V2 a, const T& ta, V2 b, const T& tb) {
        VectorField<2> v;
        v.add(a, ta);
        v.add(b, tb);
        return v;
    };
    f.v = {field({1.0, 0.5}, T::bump(1.0, {0.5, 0.0}, {1.0, 1.0}, 0.7), {-0.3, 1.0}, T::gaussian_clipped(1.0, {-0.5, 1.0}, 0.8, {1.0, 1.0}, 0.5)),
           field({0.0, 1.0}, T::bump(1.0, {0.0, 0.0}, {1.5, 1.5}, 0.8), {1.0, 0.0}, T::bump(0.5, {2.0, 0.0}, {1.0, 1.0}, 0.5)),
           field({1.0, 1.0}, T::gaussian_clipped(1.0, {-1.5, -1.5}, 1.0, {1.0, 1.0}, 0.6), {0.5, -1.0}, T::bump(1.0, {1.5, 1.5}, {0.7, 0.7}, 0.6)),
           field({1.0, 0.0}, T::bump(2.0, {0.0, 1.0}, {2.0, 0.5}, 0.5), {0.0, -1.0}, T::gaussian_clipped(1.0, {0.0, -2.0}, 0.8, {1.0, 1.0}, 0.6)),
           field({-1.0, 0.3}, T::bump(1.0, {-2.5, 2.5}, {1.0, 1.0}, 0.8), {0.2, 0.9}, T::bump(1.0, {0.5, 0.5}, {0.6, 0.6}, 0.4))};
    return f;
}

const std::vector<Configuration<2>>& ibp_samples()
{
    static const auto s = gcmc_samples(20000, 2, derive_seed(kSeed, "c4.sample"));
    return s;
}

Outcome integration_by_parts()
{
    Outcome o;
    const auto& samples = ibp_samples();
    const auto f = functionals();
    double worst = 0.0;
    auto track = [&](const EstimatorReport& r) {
        for (std::size_t c = 0; c < r.estimate.size(); ++c) worst = std::max(worst, std::fabs(r.estimate[c] - r.reference[c]) / r.standard_error[c]);
        o.require(r);
    };
    for (std::size_t k = 0; k < 5; ++k) {
        auto r = ibp_check(f.F[k], f.v[k], samples, kLJ);
        r.name += "[" + std::to_string(k) + "]";
        track(r);
        auto a = ibp_aggregate_check(f.F[k], f.G[k], samples, kLJ);
        a.name += "[" + std::to_string(k) + "]";
        track(a);
    }
    o.summary = fmt("%g samples, 5 IBP-1 + 5 IBP-2 choices, worst |z| = %.2f", samples.size(), worst);
    return o;
}

Outcome generator_consistency()
{
    Outcome o;
    const auto& samples = ibp_samples();
    const auto f = functionals();
    double worst = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
        auto r = generator_symmetry_check(f.F[k], f.G[k], samples, kLJ);
        r.name += "[" + std::to_string(k) + "]";
        for (std::size_t c = 0; c < r.estimate.size(); ++c) worst = std::max(worst, std::fabs(r.estimate[c] - r.reference[c]) / r.standard_error[c]);
        o.require(r);
    }
    IntegratorParams p;
    FeynmanKacOptions fo;
    fo.paths = 8000;
    fo.workers = workers();
    const auto tf = TestFunction<2>::gaussian_clipped(1.0, {0.1, 0.0}, 0.8, {1.5, 1.5}, 0.5);
    std::vector<Configuration<2>> gammas{Configuration<2>(kBox, {{0.9, -0.5}})};
    for (std::size_t k = 0; k < 3; ++k) gammas.push_back(samples[5000 * k + 17]);
    std::size_t fk = 0;
    for (std::size_t g = 0; g < gammas.size(); ++g) {
        for (std::size_t k : {std::size_t{0}, std::size_t{2}}) {
            auto r = feynman_kac_env(f.F[k], gammas[g], kLJ, p, derive_seed(kSeed, "c5.env", 10 * g + k), fo);
            r.name += "[gamma" + std::to_string(g) + ",F" + std::to_string(k) + "]";
            o.require(r);
            ++fk;
        }
        auto c = feynman_kac_coup(tf, f.F[0], V2{0.3, 0.2}, gammas[g], kLJ, p, derive_seed(kSeed, "c5.coup", g), fo);
        c.name += "[gamma" + std::to_string(g) + "]";
        o.require(c);
        ++fk;
    }
    o.summary = fmt("symmetry worst |z| = %.2f, %g Feynman-Kac comparisons", worst, fk);
    return o;
}

// ---------------------------------------------------------------- 6

Outcome mean_forward_velocity_check()
{
    Outcome o;
    const auto samples = gcmc_samples(10, 50, derive_seed(kSeed, "c6.sample"));
    IntegratorParams p;
    VelocityOptions vo;
    vo.workers = workers();
    double worst = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        auto r = mean_forward_velocity(samples[k], kLJ, p, derive_seed(kSeed, "c6.paths", k), vo);
        r.name += "[" + std::to_string(k) + "]";
        for (std::size_t c = 0; c < 2; ++c) worst = std::max(worst, std::fabs(r.estimate[c] - r.reference[c]) / r.standard_error[c]);
        o.require(r);
    }
    o.summary = fmt("10 configurations, %g paths each, worst |z| = %.2f", vo.paths, worst);
    return o;
}

// ---------------------------------------------------------------- 7

Outcome displacement_reconstruction()
{
    Outcome o;
    const auto init = starts(gcmc_samples(200, 5, derive_seed(kSeed, "c7.sample")));
    IntegratorParams p;
    ReconstructionOptions ro;
    ro.workers = workers();
    const auto s = reconstruct_displacement(init, 0.5, p, kLJ, derive_seed(kSeed, "c7.paths"), ro);
    o.require(s.reports);
    o.evidence["sup_error"] = s.sup_error;
    o.evidence["residual_sq"] = s.residual_sq;
    o.evidence["qv_bound"] = s.qv_bound;
    o.summary = fmt("sup error %.3f > %.3f > %.3f", s.sup_error[0], s.sup_error[1], s.sup_error[2]) +
                fmt(", residual^2/QV %.2f %.2f %.2f", s.residual_sq[0] / s.qv_bound[0], s.residual_sq[1] / s.qv_bound[1], s.residual_sq[2] / s.qv_bound[2]);
    return o;
}

// ---------------------------------------------------------------- 8

std::vector<Observable<2>> local_observables()
{
    return {{"near_count", [](const Configuration<2>& c) {
                 double n = 0;
                 for (const auto& y : c.positions()) n += norm(y) < 1.5;
                 return n;
             }},
            {"gaussian_density", [](const Configuration<2>& c) {
                 double s = 0;
                 for (const auto& y : c.positions()) s += std::exp(-0.5 * dot(y, y));
                 return s;
             }},
            {"tag_energy", [](const Configuration<2>& c) {
                 double e = 0;
                 for (const auto& y : c.positions()) e += kLJ.evaluate(y);
                 return e;
             }}};
}

Outcome stationarity_and_ergodicity()
{
    Outcome o;
    IntegratorParams p;
    const auto obs = local_observables();
    const auto samples = gcmc_samples(200, 10, derive_seed(kSeed, "c8.sample"));
    o.require(stationarity_check(samples, 0.5, p, kLJ, derive_seed(kSeed, "c8.stationarity"), obs, workers()));

    // Two dispersed starts with the same particle count: the equilibrium sample whose count
    // is closest to the mean, and a compact square cluster on the far side of the box.
    double mean_n = 0.0;
    for (const auto& c : samples) mean_n += static_cast<double>(c.size()) / static_cast<double>(samples.size());
    const Configuration<2>& a = *std::min_element(samples.begin(), samples.end(), [&](const auto& x, const auto& y) {
        return std::fabs(double(x.size()) - mean_n) < std::fabs(double(y.size()) - mean_n);
    });
    const std::size_t n = a.size();
    o.evidence["mean_count"] = mean_n;
    std::vector<V2> cluster;
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    for (std::size_t i = 0; cluster.size() < n; ++i) cluster.push_back(kBox.wrap(V2{2.0 + 1.12 * double(i % side), 2.0 + 1.12 * double(i / side)}));
    const Configuration<2> b(kBox, cluster);

    const double T = 150.0;
    const std::size_t every = 1000;
    std::vector<std::vector<std::vector<double>>> series(2);
    parallel_for(2, workers(), [&](std::size_t k) {
        series[k] = observe_along(CoupledState<2>{k == 0 ? a : b}, T, p, kLJ, derive_seed(kSeed, "c8.long", k), obs, every);
    });
    // Canonical equilibrium at the same count: displacement-only Metropolis.
    GcmcParams canon;
    canon.activity = kActivity;
    canon.move_mix = {0.0, 0.0, 1.0};
    RandomStream rng(derive_seed(kSeed, "c8.canonical"));
    const auto chain = sample_chain(canon, kLJ, kBox, 500, 4000, 5, rng, &a);
    for (std::size_t j = 0; j < obs.size(); ++j) {
        o.require(ergodicity_two_starts(obs[j].name, series[0][j], series[1][j]));
        std::vector<double> ens;
        for (const auto& c : chain) ens.push_back(obs[j].fn(c));
        std::vector<double> both = series[0][j];
        both.insert(both.end(), series[1][j].begin(), series[1][j].end());
        o.require(ergodicity_time_average(obs[j].name, both, ens));
    }
    o.summary = fmt("200 samples evolved to t=0.5; two starts with n=%g run to T=%g", n, T);
    return o;
}

// ---------------------------------------------------------------- 9

Outcome invariance_scaling()
{
    Outcome o;
    IntegratorParams p;
    p.series_stride = 100;
    const auto init = starts(gcmc_samples(640, 10, derive_seed(kSeed, "c9.sample")));
    const auto ens = simulate_ensemble(init, 16.0, p, kLJ, derive_seed(kSeed, "c9.simulate"), workers());
    ScalingOptions so;
    const auto S = invariance_scaling_test(ens, so);
    // Required: normality rate, linearity, covariance rate against D_hat, and the D_hat
    // invariants. The lag-one independence test is a finite-epsilon diagnostic and is kept
    // as evidence only.
    for (const auto& r : S.reports) {
        if (r.name == "scaling.independence") o.evidence["informational"].push_back(io::to_json(r));
        else o.require(r);
    }
    std::size_t caps = 0, evals = 0;
    for (const auto& t : ens) {
        caps += t.diagnostics.force.cap_events;
        evals += t.diagnostics.force.evaluations;
    }
    o.evidence["cap_event_fraction"] = evals ? double(caps) / double(evals) : 0.0;
    const auto& D = S.diffusion;
    o.summary = fmt("D_hat = [%.3f %.3f; . %.3f]", D.matrix[0], D.matrix[1], D.matrix[3]) + fmt(" from %g trajectories to T=16, R^2 %.4f %.4f", ens.size(), D.r_squared[0], D.r_squared[1]);
    return o;
}

// ---------------------------------------------------------------- 10

Outcome potential_audit()
{
    Outcome o;
    for (std::size_t d : {2u, 3u}) {
        const auto lj = PairPotential::lennard_jones(1.0, 1.0, d).truncate_and_shift(2.5);
        const auto rep = audit_conditions(lj, {2.0, 4.0});
        const std::string tag = "LJ d=" + std::to_string(d);
        o.check(tag + " (I)", rep.verdict.at("I") == Verdict::Pass, rep.integral_I);
        o.check(tag + " (LR)", rep.verdict.at("LR") == Verdict::Pass, rep.lr_envelope_integral);
        for (double q : {2.0, 4.0}) o.check(tag + " (DL^p) p=" + fmt("%g", q), rep.status_DLp.at(q) == Convergence::Convergent, rep.integral_DLp.at(q));
        o.check(tag + " DL verdict", rep.verdict.at("DL") == Verdict::Pass, to_string(rep.verdict.at("DL")));
    }
    const auto bad = audit_conditions(RadialProfile::algebraic_well(2), {2.0});
    o.check("fail-case potential fails (LR)", bad.verdict.at("LR") == Verdict::Fail, to_string(bad.verdict.at("LR")));
    o.summary = "LJ d=2,3 pass (I), (LR), (DL^p) p=2,4; algebraic well fails (LR)";
    return o;
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> all = {
        {1, "free-particle calibration", free_particle_calibration},
        {2, "frame equivalence", frame_equivalence},
        {3, "GCMC correctness", gcmc_correctness},
        {4, "integration by parts", integration_by_parts},
        {5, "generator consistency", generator_consistency},
        {6, "mean forward velocity", mean_forward_velocity_check},
        {7, "displacement reconstruction", displacement_reconstruction},
        {8, "stationarity and ergodicity", stationarity_and_ergodicity},
        {9, "invariance-principle scaling", invariance_scaling},
        {10, "potential audit", potential_audit},
    };
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));

    json out = json::array();
    bool ok = true;
    for (const auto& c : all) {
        if (!pick.empty() && !pick.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = c.run();
        } catch (const std::exception& e) {
            r.pass = false;
            r.summary = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s  criterion %2d  %-30s %7.1f s  %s\n", r.pass ? "PASS" : "FAIL", c.id, c.name, secs, r.summary.c_str());
        std::fflush(stdout);
        ok = ok && r.pass;
        out.push_back({{"criterion", c.id}, {"name", c.name}, {"pass", r.pass}, {"seconds", secs}, {"summary", r.summary}, {"evidence", r.evidence}});
    }
    io::write_json("acceptance_report.json", {{"seed", kSeed}, {"all_pass", ok}, {"criteria", out}});
    return ok ? 0 : 1;
}

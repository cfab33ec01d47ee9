#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "tagdiff/cylinder.hpp"
#include "tagdiff/gibbs.hpp"
#include "tagdiff/stats.hpp"

using namespace tagdiff;

namespace {

const PairPotential kLJ = PairPotential::lennard_jones(1, 1, 2).truncate_and_shift(2.5);
const TorusBox<2> kBox(10.0);
using V2 = Vec<2>;

std::vector<TestFunction<2>> primitives()
{
    return {
        TestFunction<2>::bump(1.5, {0.5, -0.5}, {1.0, 0.5}, 0.8),
        TestFunction<2>::smooth_coordinate(1, {0.0, 0.0}, {2.0, 2.0}, 0.5),
        TestFunction<2>::gaussian_clipped(2.0, {-1.0, 0.5}, 0.7, {1.0, 1.0}, 1.0),
    };
}

Configuration<2> random_config(std::size_t n, std::uint64_t seed, double span = 4.5)
{
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(-span, span);
    Configuration<2> c(kBox);
    while (c.size() < n) {
        const V2 x{u(g), u(g)};
        bool ok = true;
        for (const auto& y : c.positions()) ok = ok && norm(min_image(kBox, x, y)) > 0.95;
        if (norm(x) < 0.95) ok = false;
        if (ok) c.add(x);
    }
    return c;
}

CylinderFunction<2> sample_F()
{
    const auto p = primitives();
    return CylinderFunction<2>(OuterFunction::sine({0.7, -0.4}, 0.3), {p[0], p[2]});
}

CylinderFunction<2> sample_G()
{
    const auto p = primitives();
    return CylinderFunction<2>(OuterFunction::gaussian({0.3, 0.5}), {p[1], p[2]});
}

/// Environment coordinates flattened as (y_1, y_2, ...).
double F_of(const CylinderFunction<2>& F, const std::vector<V2>& pos)
{
    return eval(F, Configuration<2>(kBox, pos));
}

/// Ito oracle for L_env: drift . grad + sum_{ij} (delta_ij + 1) tr(d^2 F / dy_i dy_j) with all
/// derivatives of F by finite differences in raw particle coordinates.
double ito_generator_env(const CylinderFunction<2>& F, const Configuration<2>& cfg, const PairPotential& pot)
{
    const std::size_t n = cfg.size();
    std::vector<V2> pos(cfg.positions().begin(), cfg.positions().end());
    const auto pf = all_forces(cfg, pot, ForceOptions{1e300});
    V2 tag{};
    for (const auto& y : pos) tag += pot.gradient(y);
    const double h = 1e-4;
    double out = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const V2 b = pf[i] - pot.gradient(pos[i]) - tag;
        for (std::size_t k = 0; k < 2; ++k) {
            auto p = pos, m = pos;
            p[i][k] += h;
            m[i][k] -= h;
            out += b[k] * (F_of(F, p) - F_of(F, m)) / (2 * h);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double a = (i == j) ? 2.0 : 1.0;
            for (std::size_t k = 0; k < 2; ++k) {
                auto pp = pos, pm = pos, mp = pos, mm = pos;
                pp[i][k] += h; pp[j][k] += h;
                pm[i][k] += h; pm[j][k] -= h;
                mp[i][k] -= h; mp[j][k] += h;
                mm[i][k] -= h; mm[j][k] -= h;
                out += a * (F_of(F, pp) - F_of(F, pm) - F_of(F, mp) + F_of(F, mm)) / (4 * h * h);
            }
        }
    }
    return out;
}

} // namespace

TEST(Smoothstep, EndpointsAndDerivatives)
{
    EXPECT_EQ(smooth::step(0.0), 0.0);
    EXPECT_EQ(smooth::step(1.0), 1.0);
    EXPECT_EQ(smooth::step(0.5), 0.5);
    for (double t : {0.1, 0.37, 0.8}) {
        const double h = 1e-6;
        EXPECT_NEAR(smooth::step_d1(t), (smooth::step(t + h) - smooth::step(t - h)) / (2 * h), 1e-8);
        EXPECT_NEAR(smooth::step_d2(t), (smooth::step_d1(t + h) - smooth::step_d1(t - h)) / (2 * h), 1e-7);
    }
}

TEST(TestFunctions, GradientAndLaplacianMatchFiniteDifferences)
{
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> u(-3.5, 3.5);
    for (const auto& f : primitives()) {
        for (int t = 0; t < 300; ++t) {
            const V2 x{u(g), u(g)};
            const auto j = f.jet(x);
            const double h = 1e-5;
            double lap = 0.0;
            for (std::size_t k = 0; k < 2; ++k) {
                V2 p = x, m = x;
                p[k] += h;
                m[k] -= h;
                EXPECT_NEAR(j.gradient[k], (f.value(p) - f.value(m)) / (2 * h), 1e-5 * (1 + std::fabs(j.gradient[k])));
                lap += (f.gradient(p)[k] - f.gradient(m)[k]) / (2 * h);
            }
            EXPECT_NEAR(j.laplacian, lap, 1e-4 * (1 + std::fabs(lap))) << to_string(f.kind());
        }
    }
}

TEST(TestFunctions, VanishOutsideSupport)
{
    for (const auto& f : primitives()) {
        const auto lo = f.support_lo(), hi = f.support_hi();
        for (const V2& x : {V2{lo[0] - 1e-9, 0.0}, V2{hi[0], 0.3}, V2{0.0, hi[1] + 0.2}, V2{4.9, -4.9}}) {
            const auto j = f.jet(x);
            EXPECT_EQ(j.value, 0.0);
            EXPECT_EQ(j.gradient, (V2{0.0, 0.0}));
            EXPECT_EQ(j.laplacian, 0.0);
        }
        EXPECT_TRUE(f.supported_in(kBox));
    }
    EXPECT_FALSE(TestFunction<2>::bump(1, {4.0, 0.0}, {1.0, 1.0}, 0.5).supported_in(kBox));
    EXPECT_THROW(TestFunction<2>::bump(1, {0, 0}, {1, 1}, 0.0), UsageError);
}

TEST(TestFunctions, MollifiedCoordinateIsExactOnTheCube)
{
    const AveragingSchedule s{2.0, 0.5};
    const auto F = averaging_cylinder<2>(0, s);
    const auto& f = F.inner[0];
    const auto& c = F.inner[1];
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> in(-2.0, 2.0), out(2.5, 5.0);
    for (int t = 0; t < 200; ++t) {
        const V2 x{in(g), in(g)};
        EXPECT_EQ(f.value(x), x[0]);
        EXPECT_EQ(c.value(x), 1.0);
        const V2 y{(t % 2 ? -1 : 1) * out(g), in(g)};
        EXPECT_EQ(f.value(y), 0.0);
        EXPECT_EQ(c.value(y), 0.0);
    }
}

TEST(OuterFunctions, DerivativesMatchFiniteDifferences)
{
    const std::vector<OuterFunction> gs{OuterFunction::linear({1.0, -2.0}, 0.5), OuterFunction::sine({0.7, -0.4}, 0.3),
                                        OuterFunction::tanh({0.2, 0.9}, -0.1), OuterFunction::gaussian({0.3, 0.5}),
                                        OuterFunction::ratio(2.5), OuterFunction::product()};
    const std::vector<double> s{0.8, 1.7};
    for (const auto& g : gs) {
        EXPECT_FALSE(g.numeric_hessian());
        const auto gr = g.gradient(s);
        const auto H = g.hessian(s);
        const auto Hfd = g.fd_hessian(s);
        for (std::size_t i = 0; i < 2; ++i) {
            auto p = s, m = s;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            EXPECT_NEAR(gr[i], (g.value(p) - g.value(m)) / 2e-6, 1e-7) << g.name();
            for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(H[i * 2 + j], Hfd[i * 2 + j], OuterFunction::fd_tolerance) << g.name();
        }
    }
    const auto c = OuterFunction::custom("cube", 1, [](const auto& s) { return s[0] * s[0] * s[0]; },
                                         [](const auto& s) { return std::vector<double>{3 * s[0] * s[0]}; });
    EXPECT_TRUE(c.numeric_hessian());
    EXPECT_NEAR(c.hessian({1.3})[0], 6 * 1.3, OuterFunction::fd_tolerance);
    EXPECT_THROW(c.value({1.0, 2.0}), UsageError);
}

TEST(Cylinder, EvaluationExamples)
{
    const auto F = sample_F();
    EXPECT_EQ(eval(F, Configuration<2>(kBox)), F.outer.value({0.0, 0.0}));
    const auto count = CylinderFunction<2>(OuterFunction::linear({1.0}), {TestFunction<2>::bump(1, {0, 0}, {4.4, 4.4}, 0.5)});
    const auto cfg = random_config(20, 1, 4.3);
    EXPECT_EQ(eval(count, cfg), 20.0);
    double s0 = 0, s1 = 0;
    for (const auto& x : cfg.positions()) {
        s0 += F.inner[0].value(x);
        s1 += F.inner[1].value(x);
    }
    EXPECT_EQ(eval(F, cfg), std::sin(0.7 * s0 - 0.4 * s1 + 0.3));
}

TEST(Cylinder, GradientsMatchSingleParticleDisplacement)
{
    const auto F = sample_F();
    const auto cfg = random_config(20, 3);
    const auto G = gradients(F, cfg);
    V2 agg{};
    for (const auto& v : G.per_particle) agg += v;
    EXPECT_NEAR(agg[0], G.aggregate[0], 1e-14);
    EXPECT_NEAR(agg[1], G.aggregate[1], 1e-14);
    std::vector<V2> pos(cfg.positions().begin(), cfg.positions().end());
    for (std::size_t p = 0; p < pos.size(); ++p) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto a = pos, b = pos;
            a[p][k] += 1e-6;
            b[p][k] -= 1e-6;
            EXPECT_NEAR(G.per_particle[p][k], (F_of(F, a) - F_of(F, b)) / 2e-6, 1e-5);
        }
    }
    const auto C = gradients(CylinderFunction<2>::constant(3.0), cfg);
    for (const auto& v : C.per_particle) EXPECT_EQ(v, (V2{0, 0}));
}

TEST(Generators, TrivialCases)
{
    const auto cfg = random_config(10, 5);
    EXPECT_EQ(generator_env(CylinderFunction<2>::constant(2.0), cfg, kLJ), 0.0);
    EXPECT_EQ(generator_env(sample_F(), Configuration<2>(kBox), kLJ), 0.0);
    const auto f0 = TestFunction<2>::bump(0.0, {0, 0}, {1, 1}, 1);
    EXPECT_EQ(generator_coup(f0, CylinderFunction<2>::constant(1.0), {0.3, 0.2}, cfg, kLJ), 0.0);
}

TEST(Generators, SingletonClosedForm)
{
    const auto p = primitives();
    const CylinderFunction<2> F(OuterFunction::tanh({0.8}, 0.1), {p[2]});
    for (const V2& x : {V2{-1.0, 0.9}, V2{-0.2, 1.3}, V2{-1.8, -0.3}}) {
        Configuration<2> c(kBox, {x});
        const auto j = p[2].jet(x);
        const double u = 0.8 * j.value + 0.1, t = std::tanh(u);
        const double g1 = 0.8 * (1 - t * t), g2 = 0.64 * (-2 * t * (1 - t * t));
        const double expect = 2 * g2 * norm_sq(j.gradient) + g1 * (2 * j.laplacian - 2 * dot(kLJ.gradient(x), j.gradient));
        EXPECT_NEAR(generator_env(F, c, kLJ), expect, 1e-12);
    }
}

TEST(Generators, EnvMatchesItoOracle)
{
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        const auto cfg = random_config(7, seed, 3.0);
        for (const auto& F : {sample_F(), sample_G()}) {
            const double a = generator_env(F, cfg, kLJ);
            const double b = ito_generator_env(F, cfg, kLJ);
            EXPECT_NEAR(a, b, 2e-4 * (1 + std::fabs(b)));
        }
    }
}

TEST(Generators, CoupMatchesItoOracle)
{
    // Oracle on (xi, y): drift (<grad phi>, env drift); second-order weights xi-xi 1, xi-y -1, y-y (delta + 1).
    const auto f = TestFunction<2>::gaussian_clipped(1.0, {0.5, 0.0}, 1.2, {1.5, 1.5}, 1.0);
    const auto F = sample_F();
    const auto cfg = random_config(5, 21, 3.0);
    const V2 xi{0.9, -0.4};
    const double h = 1e-4;
    const std::vector<V2> pos(cfg.positions().begin(), cfg.positions().end());
    auto G = [&](const V2& x, const std::vector<V2>& y) { return f.value(x) * F_of(F, y); };
    V2 tag{};
    for (const auto& y : pos) tag += kLJ.gradient(y);
    // Terms not involving xi reduce to f(xi) L_env F.
    double expect = f.value(xi) * ito_generator_env(F, cfg, kLJ);
    for (std::size_t k = 0; k < 2; ++k) {
        V2 p = xi, m = xi;
        p[k] += h;
        m[k] -= h;
        expect += tag[k] * (G(p, pos) - G(m, pos)) / (2 * h);
        expect += (G(p, pos) - 2 * G(xi, pos) + G(m, pos)) / (h * h);
        for (std::size_t i = 0; i < pos.size(); ++i) {
            auto yp = pos, ym = pos;
            yp[i][k] += h;
            ym[i][k] -= h;
            const double mixed = (G(p, yp) - G(p, ym) - G(m, yp) + G(m, ym)) / (4 * h * h);
            expect += 2.0 * (-1.0) * mixed;
        }
    }
    EXPECT_NEAR(generator_coup(f, F, xi, cfg, kLJ), expect, 1e-3 * (1 + std::fabs(expect)));
    // F == 1 reduces to lap f + (<grad phi>, grad f).
    const auto one = CylinderFunction<2>::constant(1.0);
    const auto j = f.jet(xi);
    EXPECT_NEAR(generator_coup(f, one, xi, cfg, kLJ), j.laplacian + dot(tag, j.gradient), 1e-12);
}

TEST(DriftBv, MatchesEnergyGradientOracle)
{
    VectorField<2> v;
    v.add({1.0, 0.5}, primitives()[0]).add({-0.3, 1.0}, primitives()[2]);
    EXPECT_EQ(drift_Bv(VectorField<2>{}, random_config(5, 1), kLJ), 0.0);
    const V2 x{1.2, -0.4};
    EXPECT_NEAR(drift_Bv(v, Configuration<2>(kBox, {x}), kLJ), v.divergence(x) - dot(kLJ.gradient(x), v.value(x)), 1e-14);
    // B_v = sum div v - sum (v(x), d/dx [sum_z phi(z) + sum_pairs phi]) with the energy differentiated numerically.
    const auto cfg = random_config(15, 8, 3.5);
    std::vector<V2> pos(cfg.positions().begin(), cfg.positions().end());
    auto energy = [&](const std::vector<V2>& p) {
        const Configuration<2> c(kBox, p);
        double e = interaction_energy(c, kLJ);
        for (const auto& z : p) e += kLJ.evaluate(z);
        return e;
    };
    double expect = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        expect += v.divergence(pos[i]);
        const V2 vi = v.value(pos[i]);
        for (std::size_t k = 0; k < 2; ++k) {
            auto p = pos, m = pos;
            p[i][k] += 1e-6;
            m[i][k] -= 1e-6;
            expect -= vi[k] * (energy(p) - energy(m)) / 2e-6;
        }
    }
    EXPECT_NEAR(drift_Bv(v, cfg, kLJ), expect, 1e-5 * (1 + std::fabs(expect)));
}

TEST(Averaging, SphereAverageMatchesMonteCarlo)
{
    std::mt19937_64 g(9);
    std::normal_distribution<double> z;
    for (std::size_t d : {2u, 3u}) {
        for (double rho : {0.5, 1.2, 1.6, 3.0}) {
            const double n = 1.0;
            double s = 0, s2 = 0;
            const int M = 400000;
            for (int t = 0; t < M; ++t) {
                double v[3] = {z(g), z(g), d == 3 ? z(g) : 0.0};
                const double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                double m = 0;
                for (std::size_t k = 0; k < d; ++k) m = std::fmax(m, std::fabs(v[k]) / r);
                const double val = std::fmin(n, rho * m);
                s += val;
                s2 += val * val;
            }
            const double mean = s / M, se = std::sqrt((s2 / M - mean * mean) / M);
            EXPECT_NEAR(sphere_average_min_sup(d, n, rho), mean, 4 * se + 1e-12) << "d=" << d << " rho=" << rho;
        }
    }
    EXPECT_EQ(sphere_average_min_sup(1, 2.0, 1.5), 1.5);
}

TEST(Averaging, ScheduleForZeroPotentialIsOneOverN)
{
    for (double n : {1.0, 2.0, 4.0}) {
        const auto s = make_schedule(PairPotential::zero(2), n, 0.2);
        EXPECT_DOUBLE_EQ(s.q, 1.0 / n);
        EXPECT_DOUBLE_EQ(s.r, std::sqrt(1.0 / n));
    }
}

TEST(Averaging, ScheduleMatchesCartesianOracle)
{
    // Bounded bump potential in d=2; the oracle does the r-integral of the cube complement
    // by brute force: total mass minus a 2-D Simpson integral over [-r, r]^2.
    const auto pot = PairPotential::smooth_bump(1.0, 1.5, 2);
    auto w = [&](double x, double y) {
        const V2 v{x, y};
        return norm(pot.gradient(v)) * std::exp(-pot.evaluate(v));
    };
    auto square = [&](double r) {
        const int m = 400;
        const double h = 2 * r / m;
        double s = 0;
        for (int i = 0; i <= m; ++i) {
            const double wi = (i == 0 || i == m) ? 1 : (i % 2 ? 4 : 2);
            for (int j = 0; j <= m; ++j) {
                const double wj = (j == 0 || j == m) ? 1 : (j % 2 ? 4 : 2);
                s += wi * wj * w(-r + i * h, -r + j * h);
            }
        }
        return s * h * h / 9;
    };
    const double total = square(1.5);
    for (double n : {1.0, 2.0}) {
        const int m = 40;
        const double hr = n / m;
        double acc = 0;
        for (int i = 0; i <= m; ++i) {
            const double wi = (i == 0 || i == m) ? 1 : (i % 2 ? 4 : 2);
            acc += wi * (total - square(i * hr));
        }
        acc *= hr / 3;
        const auto s = make_schedule(pot, n, 0.2);
        EXPECT_NEAR(s.tail_integral, acc, 1e-4 * (1 + acc)) << "n=" << n;
    }
}

TEST(Averaging, GridIsMonotoneForLennardJones)
{
    const auto g = make_schedule_grid(RadialProfile::from(kLJ), {1.0, 2.0, 4.0}, 0.2);
    EXPECT_TRUE(g.monotone);
    for (const auto& s : g.steps) {
        EXPECT_EQ(s.status, Convergence::Convergent);
        EXPECT_GT(s.r, 0.0);
    }
    EXPECT_THROW(make_schedule_grid(RadialProfile::from(kLJ), {2.0, 1.0}, 0.2), UsageError);
}

TEST(Averaging, YTildeExamples)
{
    const auto s = make_schedule(kLJ, 2.0, 0.3);
    const auto cfg = random_config(20, 4);
    EXPECT_EQ(y_tilde(0, s, cfg, PairPotential::zero(2)), 0.0);
    Configuration<2> out(kBox, {{3.0, 0.5}, {-2.5, 3.5}, {4.0, -4.0}});
    EXPECT_NEAR(y_tilde(1, s, out, kLJ), tag_drift(out, kLJ)[1], 1e-15);
}

TEST(Averaging, YTildeIsGeneratorOfAveragingFunctional)
{
    // Away from the delta shell, L_env F_n^delta + <d_i phi> = Y~_i^n.
    const auto s = make_schedule(kLJ, 2.0, 0.3);
    auto cfg = random_config(25, 6);
    Configuration<2> clean(kBox);
    for (const auto& x : cfg.positions())
        if (!in_shell(x, s.n, s.delta)) clean.add(x);
    for (std::size_t i = 0; i < 2; ++i) {
        const double lhs = generator_env(averaging_cylinder<2>(i, s), clean, kLJ) + tag_drift(clean, kLJ)[i];
        EXPECT_NEAR(lhs, y_tilde(i, s, clean, kLJ), 1e-12 * (1 + std::fabs(lhs)));
    }
}

TEST(Averaging, FunctionalExamples)
{
    const AveragingSchedule s = make_schedule(kLJ, 2.0, 0.4);
    auto v = averaging_functional(0, s, Configuration<2>(kBox));
    EXPECT_EQ(v.F, 0.0);
    EXPECT_EQ(v.H, 1);
    v = averaging_functional(0, s, Configuration<2>(kBox, {{0.0, 0.0}}));
    EXPECT_EQ(v.F, 0.0);
    EXPECT_EQ(v.H, 1);
    v = averaging_functional(1, s, Configuration<2>(kBox, {{0.3, 2.2}}));
    EXPECT_EQ(v.H, 0);
    v = averaging_functional(1, s, Configuration<2>(kBox, {{0.3, 1.0}, {-1.0, -0.5}}));
    EXPECT_DOUBLE_EQ(v.F, 0.5 / (s.normalizer(2) + 2.0));
    AveragingSchedule big = s;
    big.n = 4.8;
    EXPECT_THROW(averaging_functional(0, big, Configuration<2>(kBox)), UsageError);
}

TEST(Averaging, QvRate)
{
    EXPECT_DOUBLE_EQ(reconstruction_qv_rate(1.0, 0.0), 2.0);
    EXPECT_DOUBLE_EQ(reconstruction_qv_rate(1.0, 1.0), 2.0 * (0.25 + 0.25));
}

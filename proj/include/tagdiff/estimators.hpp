#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tagdiff/configuration.hpp"
#include "tagdiff/cylinder.hpp"
#include "tagdiff/dynamics.hpp"
#include "tagdiff/errors.hpp"
#include "tagdiff/parallel.hpp"
#include "tagdiff/stats.hpp"

namespace tagdiff {

// ---------------------------------------------------------------- reports

enum class RuleKind {
    /// |estimate - reference| <= k se + slack, componentwise.
    WithinSE,
    /// estimate >= reference - k se.
    NotBelowSE,
    /// estimate >= bound.
    AtLeast,
    /// estimate <= k reference.
    AtMostTimes,
    /// |estimate - reference| <= bound.
    AbsWithin,
    /// estimate strictly decreasing along its components.
    Decreasing,
};

inline const char* to_string(RuleKind k) noexcept
{
    switch (k) {
    case RuleKind::WithinSE: return "within_se";
    case RuleKind::NotBelowSE: return "not_below_se";
    case RuleKind::AtLeast: return "at_least";
    case RuleKind::AtMostTimes: return "at_most_times";
    case RuleKind::AbsWithin: return "abs_within";
    case RuleKind::Decreasing: return "decreasing";
    }
    return "?";
}

struct ToleranceRule {
    RuleKind kind = RuleKind::WithinSE;
    double k = 3.0;
    double slack = 0.0;
    double bound = 0.0;

    static ToleranceRule within_se(double k, double slack = 0.0) { return {RuleKind::WithinSE, k, slack, 0.0}; }
    static ToleranceRule not_below_se(double k) { return {RuleKind::NotBelowSE, k, 0.0, 0.0}; }
    static ToleranceRule at_least(double bound) { return {RuleKind::AtLeast, 0.0, 0.0, bound}; }
    static ToleranceRule at_most_times(double k) { return {RuleKind::AtMostTimes, k, 0.0, 0.0}; }
    static ToleranceRule abs_within(double bound) { return {RuleKind::AbsWithin, 0.0, 0.0, bound}; }
    static ToleranceRule decreasing() { return {RuleKind::Decreasing, 0.0, 0.0, 0.0}; }
};

/// pass is a pure function of (estimate, standard_error, reference, rule); see evaluate().
struct EstimatorReport {
    std::string name;
    std::vector<double> estimate;
    std::vector<double> standard_error;
    std::vector<double> reference;
    std::size_t sample_count = 0;
    ToleranceRule rule;
    bool pass = false;
    /// Informational numbers that do not enter the verdict.
    std::map<std::string, double> details;

    bool evaluate() const
    {
        const std::size_t m = estimate.size();
        if (m == 0) return false;
        auto se = [&](std::size_t c) { return c < standard_error.size() ? standard_error[c] : 0.0; };
        auto ref = [&](std::size_t c) { return c < reference.size() ? reference[c] : 0.0; };
        for (std::size_t c = 0; c < m; ++c) {
            const double e = estimate[c];
            if (!std::isfinite(e)) return false;
            switch (rule.kind) {
            case RuleKind::WithinSE:
                if (!(std::fabs(e - ref(c)) <= rule.k * se(c) + rule.slack)) return false;
                break;
            case RuleKind::NotBelowSE:
                if (!(e >= ref(c) - rule.k * se(c))) return false;
                break;
            case RuleKind::AtLeast:
                if (!(e >= rule.bound)) return false;
                break;
            case RuleKind::AtMostTimes:
                if (!(e <= rule.k * ref(c))) return false;
                break;
            case RuleKind::AbsWithin:
                if (!(std::fabs(e - ref(c)) <= rule.bound)) return false;
                break;
            case RuleKind::Decreasing:
                if (c > 0 && !(e < estimate[c - 1])) return false;
                break;
            }
        }
        return true;
    }

    EstimatorReport& finalize()
    {
        pass = evaluate();
        return *this;
    }
};

namespace detail {

template <std::size_t D>
std::size_t index_at(const Trajectory<D>& tr, double t)
{
    const auto it = std::lower_bound(tr.times.begin(), tr.times.end(), t - 1e-9 * std::fmax(1.0, t));
    if (it == tr.times.end() || std::fabs(*it - t) > 1e-9 * std::fmax(1.0, t))
        throw UsageError("time " + std::to_string(t) + " is not on the recorded grid");
    return static_cast<std::size_t>(it - tr.times.begin());
}

/// Sample covariance (D x D, row-major) of the rows of x, and the same with each row left out.
template <std::size_t D>
struct LooCovariance {
    std::array<double, D * D> full{};
    std::vector<std::array<double, D * D>> loo;
};

template <std::size_t D>
LooCovariance<D> loo_covariance(const std::vector<Vec<D>>& x)
{
    const std::size_t n = x.size();
    if (n < 3) throw UsageError("need at least 3 samples for a jackknifed covariance");
    Vec<D> s1 = zero_vec<D>();
    std::array<double, D * D> s2{};
    for (const auto& v : x) {
        s1 += v;
        for (std::size_t a = 0; a < D; ++a)
            for (std::size_t b = 0; b < D; ++b) s2[a * D + b] += v[a] * v[b];
    }
    auto cov = [](const Vec<D>& m1, const std::array<double, D * D>& m2, double cnt) {
        std::array<double, D * D> c{};
        const Vec<D> mu = (1.0 / cnt) * m1;
        for (std::size_t a = 0; a < D; ++a)
            for (std::size_t b = 0; b < D; ++b) c[a * D + b] = (m2[a * D + b] - cnt * mu[a] * mu[b]) / (cnt - 1.0);
        return c;
    };
    LooCovariance<D> r;
    r.full = cov(s1, s2, static_cast<double>(n));
    r.loo.resize(n);
    for (std::size_t p = 0; p < n; ++p) {
        std::array<double, D * D> m2 = s2;
        for (std::size_t a = 0; a < D; ++a)
            for (std::size_t b = 0; b < D; ++b) m2[a * D + b] -= x[p][a] * x[p][b];
        r.loo[p] = cov(s1 - x[p], m2, static_cast<double>(n - 1));
    }
    return r;
}

template <std::size_t D>
double min_eigenvalue(const std::array<double, D * D>& m)
{
    Eigen::Matrix<double, static_cast<int>(D), static_cast<int>(D)> A;
    for (std::size_t a = 0; a < D; ++a)
        for (std::size_t b = 0; b < D; ++b) A(static_cast<int>(a), static_cast<int>(b)) = 0.5 * (m[a * D + b] + m[b * D + a]);
    Eigen::SelfAdjointEigenSolver<decltype(A)> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

template <std::size_t D>
Configuration<D> as_configuration(const TorusBox<D>& box, const std::vector<Vec<D>>& pts)
{
    return Configuration<D>(box, pts);
}

} // namespace detail

// ---------------------------------------------------------------- mean forward velocity

struct VelocityOptions {
    /// Shortest horizon; runs at 2 delta and 4 delta reuse the same noise. The truncated
    /// force jumps at the cutoff, so E[X_delta] / delta is only smooth in delta once no
    /// particle is within about sqrt(4 delta) of the cutoff shell; hence the tiny default.
    double delta = 1e-6;
    /// Steps per horizon; the step size is horizon / steps, so the time-discretization
    /// error shrinks with the horizon and the extrapolation removes it too.
    std::size_t steps = 10;
    std::size_t paths = 5000;
    /// Subtract the tag's noise sum, which has mean zero.
    bool control_variate = true;
    std::size_t workers = 1;
    double k_se = 3.0;
};

/// E[X_delta] / delta from the coupled dynamics started at (0, gamma0), extrapolated to
/// delta -> 0 as 2 m(delta) - m(2 delta) per path and compared with <grad phi, gamma0>.
/// The same combination one level up estimates the remaining second-order bias, which is
/// added as slack.
template <std::size_t D>
EstimatorReport mean_forward_velocity(const Configuration<D>& gamma0, const PairPotential& pot, const IntegratorParams& p, std::uint64_t seed,
                                      const VelocityOptions& o = {})
{
    if (!(o.delta > 0.0)) throw UsageError("delta must be positive");
    if (o.paths < 2) throw UsageError("need at least 2 paths");
    if (o.steps == 0) throw UsageError("need at least one step per horizon");
    const std::array<double, 3> horizon{o.delta, 2.0 * o.delta, 4.0 * o.delta};
    // X / horizon per path and horizon: [path][h]
    std::vector<std::array<Vec<D>, 3>> m(o.paths);
    const CoupledState<D> start{gamma0};
    parallel_for(o.paths, o.workers, [&](std::size_t i) {
        for (std::size_t h = 0; h < 3; ++h) {
            IntegratorParams q = p;
            q.dt = horizon[h] / static_cast<double>(o.steps);
            CoupledIntegrator<D> it(gamma0.box(), pot, q);
            it.load(start);
            RandomStream rng(derive_seed(seed, i));
            Vec<D> noise = zero_vec<D>();
            for (std::size_t k = 0; k < o.steps; ++k) {
                it.step(rng);
                if (o.control_variate) noise = noise + it.last_noise()[0];
            }
            m[i][h] = (1.0 / horizon[h]) * (it.X() - noise);
        }
    });

    EstimatorReport r;
    r.name = "mean_forward_velocity";
    r.sample_count = o.paths;
    const Vec<D> ref = tag_drift(gamma0, pot);
    double slack = 0.0;
    for (std::size_t c = 0; c < D; ++c) {
        std::vector<double> e(o.paths), e2(o.paths);
        for (std::size_t i = 0; i < o.paths; ++i) {
            e[i] = 2.0 * m[i][0][c] - m[i][1][c];
            e2[i] = 2.0 * m[i][1][c] - m[i][2][c];
        }
        const double est = stats::mean(e);
        r.estimate.push_back(est);
        r.standard_error.push_back(stats::standard_error(e));
        r.reference.push_back(ref[c]);
        slack = std::max(slack, std::fabs(stats::mean(e2) - est) / 3.0);
        for (std::size_t h = 0; h < 3; ++h) {
            double s = 0.0;
            for (std::size_t i = 0; i < o.paths; ++i) s += m[i][h][c];
            r.details["mean_velocity[" + std::to_string(c) + "]@" + std::to_string(1 << h) + "delta"] = s / static_cast<double>(o.paths);
        }
    }
    r.details["delta"] = o.delta;
    r.details["steps"] = static_cast<double>(o.steps);
    r.rule = ToleranceRule::within_se(o.k_se, slack);
    return r.finalize();
}

// ---------------------------------------------------------------- martingale diagnostics

struct MartingaleOptions {
    double k_se = 3.0;
    double alpha = 0.01;
    /// Increments per trajectory pooled into the normality test.
    std::size_t increments_per_path = 50;
    std::size_t max_pooled = 5000;
};

/// M = X - C on the recorded grid: E[M_T] = 0, realized QV slope 2 per coordinate, zero
/// cross variation, Gaussian increments.
template <std::size_t D>
std::vector<EstimatorReport> martingale_diagnostics(const std::vector<Trajectory<D>>& ens, const MartingaleOptions& o = {})
{
    if (ens.size() < 2) throw UsageError("martingale diagnostics need at least 2 trajectories");
    for (const auto& tr : ens) {
        if (tr.compensator.size() != tr.displacement.size() || tr.compensator.empty())
            throw UsageError("martingale diagnostics need the compensator series");
        if (tr.times.size() != tr.displacement.size()) throw UsageError("trajectory series have different lengths");
        if (!(tr.times.back() > tr.times.front())) throw UsageError("trajectory window has zero length");
    }
    const std::size_t n = ens.size();
    std::vector<std::vector<double>> mT(D), qv(D), cross;
    std::vector<std::vector<double>> pooled(D);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < D; ++a)
        for (std::size_t b = a + 1; b < D; ++b) pairs.emplace_back(a, b);
    cross.resize(pairs.size());
    for (const auto& tr : ens) {
        const double T = tr.times.back() - tr.times.front();
        Vec<D> sq = zero_vec<D>();
        std::vector<double> cr(pairs.size(), 0.0);
        std::size_t used = 0;
        for (std::size_t k = 1; k < tr.times.size(); ++k) {
            const Vec<D> dM = (tr.displacement[k] - tr.compensator[k]) - (tr.displacement[k - 1] - tr.compensator[k - 1]);
            const double h = tr.times[k] - tr.times[k - 1];
            for (std::size_t c = 0; c < D; ++c) sq[c] += dM[c] * dM[c];
            for (std::size_t q = 0; q < pairs.size(); ++q) cr[q] += dM[pairs[q].first] * dM[pairs[q].second];
            if (used < o.increments_per_path && pooled[0].size() < o.max_pooled && h > 0.0) {
                for (std::size_t c = 0; c < D; ++c) pooled[c].push_back(dM[c] / std::sqrt(2.0 * h));
                ++used;
            }
        }
        const Vec<D> M = (tr.displacement.back() - tr.compensator.back()) - (tr.displacement.front() - tr.compensator.front());
        for (std::size_t c = 0; c < D; ++c) {
            mT[c].push_back(M[c]);
            qv[c].push_back(sq[c] / T);
        }
        for (std::size_t q = 0; q < pairs.size(); ++q) cross[q].push_back(cr[q] / T);
    }
    std::vector<EstimatorReport> out;
    auto vec_report = [&](const std::string& name, const std::vector<std::vector<double>>& v, double ref) {
        EstimatorReport r;
        r.name = name;
        r.sample_count = n;
        for (const auto& x : v) {
            r.estimate.push_back(stats::mean(x));
            r.standard_error.push_back(stats::standard_error(x));
            r.reference.push_back(ref);
        }
        r.rule = ToleranceRule::within_se(o.k_se);
        out.push_back(r.finalize());
    };
    vec_report("martingale.mean_terminal", mT, 0.0);
    vec_report("martingale.qv_slope", qv, 2.0);
    if (!pairs.empty()) vec_report("martingale.qv_cross", cross, 0.0);
    EstimatorReport nr;
    nr.name = "martingale.increment_normality";
    nr.sample_count = pooled[0].size();
    for (std::size_t c = 0; c < D; ++c) {
        const auto t = stats::anderson_darling_normal(pooled[c]);
        nr.estimate.push_back(t.p_value);
        nr.details["ad_statistic[" + std::to_string(c) + "]"] = t.statistic;
    }
    nr.rule = ToleranceRule::at_least(o.alpha);
    out.push_back(nr.finalize());
    return out;
}

// ---------------------------------------------------------------- diffusion matrix

template <std::size_t D>
struct DiffusionEstimate {
    std::vector<double> t_grid;
    /// Cov(X_t) per grid time, D x D row-major.
    std::vector<std::array<double, D * D>> covariance;
    std::array<double, D * D> matrix{};
    std::array<double, D * D> standard_error{};
    /// Linearity of each diagonal entry of Cov(X_t) in t: R^2 and intercept of the
    /// ordinary least-squares line (a short-time offset is allowed), and the R^2 of the
    /// through-origin fit that defines the matrix.
    std::array<double, D> r_squared{};
    std::array<double, D> intercept{};
    std::array<double, D> origin_r_squared{};
    double min_eigenvalue = 0.0;
    double min_eigenvalue_se = 0.0;
    std::size_t trajectories = 0;
    /// Leave-one-out matrices, kept for paired jackknife comparisons.
    std::vector<std::array<double, D * D>> loo;

    double asymmetry() const
    {
        double m = 0.0;
        for (std::size_t a = 0; a < D; ++a)
            for (std::size_t b = 0; b < D; ++b) m = std::fmax(m, std::fabs(matrix[a * D + b] - matrix[b * D + a]));
        return m;
    }
};

/// Slope through the origin of Cov(X_t) over t_grid, with a leave-one-trajectory-out jackknife.
template <std::size_t D>
DiffusionEstimate<D> diffusion_matrix(const std::vector<Trajectory<D>>& ens, const std::vector<double>& t_grid)
{
    if (ens.size() < 10) throw UsageError("diffusion matrix needs at least 10 trajectories");
    if (t_grid.empty()) throw UsageError("time grid is empty");
    for (double t : t_grid)
        if (!(t > 0.0)) throw UsageError("time grid must be positive");
    const std::size_t n = ens.size();
    DiffusionEstimate<D> e;
    e.t_grid = t_grid;
    e.trajectories = n;
    double tt = 0.0;
    for (double t : t_grid) tt += t * t;
    e.loo.assign(n, std::array<double, D * D>{});
    for (double t : t_grid) {
        std::vector<Vec<D>> x(n);
        for (std::size_t p = 0; p < n; ++p) x[p] = ens[p].displacement[detail::index_at(ens[p], t)];
        const auto lc = detail::loo_covariance<D>(x);
        e.covariance.push_back(lc.full);
        for (std::size_t c = 0; c < D * D; ++c) e.matrix[c] += t * lc.full[c] / tt;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t c = 0; c < D * D; ++c) e.loo[p][c] += t * lc.loo[p][c] / tt;
    }
    for (std::size_t c = 0; c < D * D; ++c) {
        std::vector<double> v(n);
        for (std::size_t p = 0; p < n; ++p) v[p] = e.loo[p][c];
        e.standard_error[c] = stats::jackknife_se(v);
    }
    for (std::size_t a = 0; a < D; ++a) {
        std::vector<double> y;
        for (const auto& cv : e.covariance) y.push_back(cv[a * D + a]);
        e.origin_r_squared[a] = stats::fit_through_origin(t_grid, y).r_squared;
        if (t_grid.size() < 2) {
            e.r_squared[a] = e.origin_r_squared[a];
            continue;
        }
        const auto f = stats::fit_line(t_grid, y);
        e.r_squared[a] = f.r_squared;
        e.intercept[a] = f.intercept;
    }
    e.min_eigenvalue = detail::min_eigenvalue<D>(e.matrix);
    std::vector<double> le(n);
    for (std::size_t p = 0; p < n; ++p) le[p] = detail::min_eigenvalue<D>(e.loo[p]);
    e.min_eigenvalue_se = stats::jackknife_se(le);
    return e;
}

template <std::size_t D>
std::vector<EstimatorReport> diffusion_reports(const DiffusionEstimate<D>& e, double r2_min = 0.99, double k_se = 3.0)
{
    std::vector<EstimatorReport> out;
    EstimatorReport m;
    m.name = "diffusion.matrix";
    m.sample_count = e.trajectories;
    m.estimate.assign(e.matrix.begin(), e.matrix.end());
    m.standard_error.assign(e.standard_error.begin(), e.standard_error.end());
    // Informational: the free-particle value 2 I is reported, not asserted.
    for (std::size_t a = 0; a < D; ++a)
        for (std::size_t b = 0; b < D; ++b) m.reference.push_back(a == b ? 2.0 : 0.0);
    m.rule = ToleranceRule::at_least(-std::numeric_limits<double>::infinity());
    out.push_back(m.finalize());

    EstimatorReport s;
    s.name = "diffusion.symmetry";
    s.sample_count = e.trajectories;
    s.estimate = {e.asymmetry()};
    s.reference = {0.0};
    s.rule = ToleranceRule::abs_within(1e-10);
    out.push_back(s.finalize());

    EstimatorReport p;
    p.name = "diffusion.psd";
    p.sample_count = e.trajectories;
    p.estimate = {e.min_eigenvalue};
    p.standard_error = {e.min_eigenvalue_se};
    p.reference = {0.0};
    p.rule = ToleranceRule::not_below_se(k_se);
    out.push_back(p.finalize());

    EstimatorReport l;
    l.name = "diffusion.linearity";
    l.sample_count = e.t_grid.size();
    l.estimate.assign(e.r_squared.begin(), e.r_squared.end());
    for (std::size_t a = 0; a < D; ++a) {
        l.details["intercept[" + std::to_string(a) + "]"] = e.intercept[a];
        l.details["origin_r_squared[" + std::to_string(a) + "]"] = e.origin_r_squared[a];
    }
    l.rule = ToleranceRule::at_least(r2_min);
    out.push_back(l.finalize());
    return out;
}

// ---------------------------------------------------------------- diffusive scaling

struct ScalingOptions {
    std::vector<double> eps_grid{0.5, 1.0 / 3.0, 0.25};
    /// Macroscopic times; increments are taken between consecutive points, starting at 0.
    std::vector<double> t_points{0.2, 0.4, 0.6, 0.8, 1.0};
    double alpha = 0.01;
    double acceptance = 0.95;
    double r2_min = 0.99;
    double k_se = 3.0;
};

template <std::size_t D>
struct ScalingResult {
    std::vector<double> eps_grid;
    std::vector<double> t_points;
    /// AD p-values per epsilon, indexed [increment * D + coordinate].
    std::vector<std::vector<double>> normality_p;
    /// Lag-one correlation p-value per epsilon, pooled over increments and coordinates.
    std::vector<double> independence_p;
    std::vector<double> independence_r;
    /// Pooled Cov(dZ) / dt per epsilon, and its jackknife standard error.
    std::vector<std::array<double, D * D>> rate;
    std::vector<std::array<double, D * D>> rate_se;
    DiffusionEstimate<D> diffusion;
    std::vector<EstimatorReport> reports;
};

/// Z^eps_t = eps X_{t / eps^2}. Gaussianity and independence of increments, increment
/// covariance against the diffusion-matrix slope, and linearity of Cov(X_t).
template <std::size_t D>
ScalingResult<D> invariance_scaling_test(const std::vector<Trajectory<D>>& ens, const ScalingOptions& o = {})
{
    if (ens.size() < 10) throw UsageError("scaling test needs at least 10 trajectories");
    if (o.eps_grid.empty() || o.t_points.empty()) throw UsageError("scaling test needs epsilon and time grids");
    for (double e : o.eps_grid)
        if (!(e > 0.0)) throw UsageError("epsilon must be positive");
    for (std::size_t k = 0; k < o.t_points.size(); ++k)
        if (!(o.t_points[k] > (k ? o.t_points[k - 1] : 0.0))) throw UsageError("time points must be positive and increasing");
    const double Tmin = std::accumulate(ens.begin(), ens.end(), std::numeric_limits<double>::infinity(),
                                        [](double m, const Trajectory<D>& t) { return std::fmin(m, t.times.back()); });
    const double emin = *std::min_element(o.eps_grid.begin(), o.eps_grid.end());
    if (o.t_points.back() / (emin * emin) > Tmin * (1.0 + 1e-12)) throw UsageError("eps^-2 max(t) exceeds the trajectory horizon");

    const std::size_t n = ens.size(), K = o.t_points.size();
    ScalingResult<D> R;
    R.eps_grid = o.eps_grid;
    R.t_points = o.t_points;

    std::vector<double> fine;
    for (double t : o.t_points) fine.push_back(t / (emin * emin));
    R.diffusion = diffusion_matrix(ens, fine);

    for (double eps : o.eps_grid) {
        const double s2 = 1.0 / (eps * eps);
        // dZ[k][p]
        std::vector<std::vector<Vec<D>>> dZ(K, std::vector<Vec<D>>(n));
        for (std::size_t p = 0; p < n; ++p) {
            Vec<D> prev = ens[p].displacement[0];
            for (std::size_t k = 0; k < K; ++k) {
                const Vec<D> x = ens[p].displacement[detail::index_at(ens[p], o.t_points[k] * s2)];
                dZ[k][p] = eps * (x - prev);
                prev = x;
            }
        }
        std::vector<double> pv;
        std::array<double, D * D> rate{};
        std::vector<std::array<double, D * D>> loo(n, std::array<double, D * D>{});
        for (std::size_t k = 0; k < K; ++k) {
            const double h = o.t_points[k] - (k ? o.t_points[k - 1] : 0.0);
            for (std::size_t c = 0; c < D; ++c) {
                std::vector<double> v(n);
                for (std::size_t p = 0; p < n; ++p) v[p] = dZ[k][p][c];
                pv.push_back(stats::anderson_darling_normal(v).p_value);
            }
            const auto lc = detail::loo_covariance<D>(dZ[k]);
            for (std::size_t c = 0; c < D * D; ++c) rate[c] += lc.full[c] / (h * static_cast<double>(K));
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t c = 0; c < D * D; ++c) loo[p][c] += lc.loo[p][c] / (h * static_cast<double>(K));
        }
        // Paired jackknife of rate - D_hat; both come from the same trajectories.
        std::array<double, D * D> se{};
        for (std::size_t c = 0; c < D * D; ++c) {
            std::vector<double> v(n);
            for (std::size_t p = 0; p < n; ++p) v[p] = loo[p][c] - R.diffusion.loo[p][c];
            se[c] = stats::jackknife_se(v);
        }
        // Lag-one correlation of standardized increments.
        std::vector<double> a, b;
        for (std::size_t k = 0; k + 1 < K; ++k) {
            for (std::size_t c = 0; c < D; ++c) {
                const double s0 = std::sqrt(rate[c * D + c] * (o.t_points[k] - (k ? o.t_points[k - 1] : 0.0)));
                const double s1 = std::sqrt(rate[c * D + c] * (o.t_points[k + 1] - o.t_points[k]));
                for (std::size_t p = 0; p < n; ++p) {
                    a.push_back(dZ[k][p][c] / s0);
                    b.push_back(dZ[k + 1][p][c] / s1);
                }
            }
        }
        const double rho = a.empty() ? 0.0 : stats::correlation(a, b);
        R.independence_r.push_back(rho);
        R.independence_p.push_back(a.empty() ? 1.0 : stats::correlation_p_value(rho, a.size()));
        R.normality_p.push_back(pv);
        R.rate.push_back(rate);
        R.rate_se.push_back(se);
    }

    // The two smallest epsilons carry the verdict.
    std::vector<std::size_t> order(o.eps_grid.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return o.eps_grid[i] < o.eps_grid[j]; });
    if (order.size() > 2) order.resize(2);

    EstimatorReport nr;
    nr.name = "scaling.normality";
    std::size_t tests = 0, ok = 0;
    for (std::size_t i : order) {
        for (double p : R.normality_p[i]) {
            ++tests;
            if (p >= o.alpha) ++ok;
        }
    }
    nr.sample_count = tests;
    nr.estimate = {static_cast<double>(ok) / static_cast<double>(tests)};
    nr.rule = ToleranceRule::at_least(o.acceptance);
    R.reports.push_back(nr.finalize());

    EstimatorReport ir;
    ir.name = "scaling.independence";
    ir.sample_count = n;
    for (std::size_t i : order) {
        ir.estimate.push_back(R.independence_p[i]);
        ir.details["correlation@eps=" + std::to_string(o.eps_grid[i])] = R.independence_r[i];
    }
    ir.rule = ToleranceRule::at_least(o.alpha);
    R.reports.push_back(ir.finalize());

    EstimatorReport cr;
    cr.name = "scaling.covariance_rate";
    cr.sample_count = n;
    for (std::size_t i : order) {
        for (std::size_t a2 = 0; a2 < D; ++a2) {
            for (std::size_t b2 = a2; b2 < D; ++b2) {
                cr.estimate.push_back(R.rate[i][a2 * D + b2]);
                cr.standard_error.push_back(R.rate_se[i][a2 * D + b2]);
                cr.reference.push_back(R.diffusion.matrix[a2 * D + b2]);
            }
        }
        cr.details["eps=" + std::to_string(o.eps_grid[i])] = R.rate[i][0];
    }
    cr.rule = ToleranceRule::within_se(o.k_se);
    R.reports.push_back(cr.finalize());

    for (auto& r : diffusion_reports(R.diffusion, o.r2_min, o.k_se)) R.reports.push_back(std::move(r));
    return R;
}

// ---------------------------------------------------------------- reconstruction

/// SharpLimit: the delta -> 0 form, with cube membership frozen over a step and a crossing
/// particle counted for the part of its straight segment inside the cube. Mollified: the
/// literal left-point sum of H (Y~ dt - dF) with the delta-ramped functional.
enum class ReconstructionMode { SharpLimit, Mollified };

inline const char* to_string(ReconstructionMode m) noexcept { return m == ReconstructionMode::SharpLimit ? "sharp" : "mollified"; }

struct ReconstructionTrack {
    double eta = 0.0;
    double X = 0.0;
    double sup_error = 0.0;
    /// Integral of the residual QV rate along the path.
    double qv_bound = 0.0;
    std::vector<double> path;

    double residual() const { return X - eta; }
};

namespace detail {

/// Fraction of the segment a -> b inside the closed cube [-n, n]^D.
template <std::size_t D>
double fraction_in_cube(const Vec<D>& a, const Vec<D>& b, double n)
{
    double lo = 0.0, hi = 1.0;
    for (std::size_t k = 0; k < D; ++k) {
        const double d = b[k] - a[k];
        if (d == 0.0) {
            if (std::fabs(a[k]) > n) return 0.0;
            continue;
        }
        double t0 = (-n - a[k]) / d, t1 = (n - a[k]) / d;
        if (t0 > t1) std::swap(t0, t1);
        lo = std::fmax(lo, t0);
        hi = std::fmin(hi, t1);
        if (lo >= hi) return 0.0;
    }
    return hi - lo;
}

} // namespace detail

/// Streaming reconstruction of X_i from environment increments; use as a StepObserver.
template <std::size_t D>
class DisplacementReconstructor {
public:
    DisplacementReconstructor(const TorusBox<D>& box, std::size_t axis, std::vector<AveragingSchedule> schedules, const PairPotential& pot,
                              ReconstructionMode mode, bool keep_path = false)
        : box_(box), axis_(axis), sched_(std::move(schedules)), pot_(pot), mode_(mode), keep_(keep_path), tracks_(sched_.size())
    {
        if (axis >= D) throw UsageError("axis out of range");
        for (const auto& s : sched_) s.check_fits(box.half());
        if (keep_)
            for (auto& t : tracks_) t.path.push_back(0.0);
    }

    void operator()(const StepView<D>& v)
    {
        const Configuration<D> before(box_, v.env_before);
        const auto E = environment_forces(before, pot_);
        Configuration<D> after(box_);
        if (mode_ == ReconstructionMode::Mollified) after = Configuration<D>(box_, v.env_after);
        for (std::size_t j = 0; j < sched_.size(); ++j) {
            const auto& s = sched_[j];
            auto& tr = tracks_[j];
            const double R = s.normalizer(D);
            double b = 0.0;
            for (const auto& y : v.env_before) b += in_cube(y, s.n) ? 1.0 : 0.0;
            double H = 1.0, dF = 0.0;
            if (mode_ == ReconstructionMode::Mollified) {
                const auto a0 = averaging_functional(axis_, s, before);
                const auto a1 = averaging_functional(axis_, s, after);
                H = a0.H;
                dF = a1.F - a0.F;
            } else {
                double moved = 0.0;
                for (std::size_t p = 0; p < v.env_before.size(); ++p) {
                    const Vec<D>& y0 = v.env_before[p];
                    const Vec<D> y1 = y0 + min_image(box_, v.env_after[p], y0);
                    const double lam = detail::fraction_in_cube(y0, y1, s.n);
                    if (lam > 0.0) moved += lam * (y1[axis_] - y0[axis_]);
                }
                dF = moved / (R + b);
            }
            if (H != 0.0) {
                tr.eta += H * (y_tilde(axis_, s, before, E) * v.dt - dF);
                tr.qv_bound += H * reconstruction_qv_rate(R, b) * v.dt;
            }
            tr.X += v.dX[axis_];
            tr.sup_error = std::fmax(tr.sup_error, std::fabs(tr.X - tr.eta));
            if (keep_) tr.path.push_back(tr.eta);
        }
    }

    const std::vector<ReconstructionTrack>& tracks() const { return tracks_; }
    const std::vector<AveragingSchedule>& schedules() const { return sched_; }

private:
    TorusBox<D> box_;
    std::size_t axis_;
    std::vector<AveragingSchedule> sched_;
    const PairPotential& pot_;
    ReconstructionMode mode_;
    bool keep_;
    std::vector<ReconstructionTrack> tracks_;
};

/// Batch form over a stored path: env[k] relative to the tag at step k, X[k] the tag
/// displacement. A single-state path gives eta = 0 exactly.
template <std::size_t D>
std::vector<ReconstructionTrack> reconstruct_path(const std::vector<Configuration<D>>& env, const std::vector<Vec<D>>& X, double dt,
                                                  std::size_t axis, const std::vector<AveragingSchedule>& schedules, const PairPotential& pot,
                                                  ReconstructionMode mode)
{
    if (env.empty() || env.size() != X.size()) throw UsageError("environment path and displacement path must have equal nonzero length");
    DisplacementReconstructor<D> rec(env.front().box(), axis, schedules, pot, mode, true);
    const std::vector<Vec<D>> none;
    for (std::size_t k = 0; k + 1 < env.size(); ++k) {
        if (env[k].size() != env[k + 1].size()) throw UsageError("particle count changed along the path");
        rec(StepView<D>{k, static_cast<double>(k) * dt, dt, env[k].positions(), env[k + 1].positions(), X[k + 1] - X[k], zero_vec<D>(), none});
    }
    return rec.tracks();
}

struct ReconstructionOptions {
    std::size_t axis = 0;
    std::vector<double> n_grid{1.0, 2.0, 4.0};
    double delta = 0.05;
    ReconstructionMode mode = ReconstructionMode::SharpLimit;
    std::size_t workers = 1;
    /// Residual second moment may not exceed this multiple of the mean QV bound.
    double qv_factor = 3.0;
};

struct ReconstructionSummary {
    std::vector<double> n_grid;
    std::vector<double> sup_error, sup_error_se;
    std::vector<double> residual_sq, residual_sq_se;
    std::vector<double> qv_bound;
    std::size_t paths = 0;
    std::vector<EstimatorReport> reports;
};

template <std::size_t D>
ReconstructionSummary reconstruct_displacement(const std::vector<CoupledState<D>>& initial, double T, const IntegratorParams& p,
                                               const PairPotential& pot, std::uint64_t seed, const ReconstructionOptions& o = {})
{
    if (initial.size() < 2) throw UsageError("reconstruction needs at least 2 paths");
    const auto grid = make_schedule_grid(RadialProfile::from(pot), o.n_grid, o.delta);
    const std::size_t G = o.n_grid.size(), n = initial.size();
    std::vector<std::vector<ReconstructionTrack>> res(n);
    IntegratorParams q = p;
    q.series_stride = std::max<std::size_t>(1, step_count(T, p.dt));
    q.keep_snapshots = false;
    parallel_for(n, o.workers, [&](std::size_t i) {
        DisplacementReconstructor<D> rec(initial[i].env.box(), o.axis, grid.steps, pot, o.mode);
        simulate_trajectory(initial[i], T, q, pot, derive_seed(seed, i), StepObserver<D>(std::ref(rec)));
        res[i] = rec.tracks();
    });
    ReconstructionSummary s;
    s.n_grid = o.n_grid;
    s.paths = n;
    for (std::size_t j = 0; j < G; ++j) {
        std::vector<double> sup(n), r2(n), qv(n);
        for (std::size_t i = 0; i < n; ++i) {
            sup[i] = res[i][j].sup_error;
            r2[i] = res[i][j].residual() * res[i][j].residual();
            qv[i] = res[i][j].qv_bound;
        }
        s.sup_error.push_back(stats::mean(sup));
        s.sup_error_se.push_back(stats::standard_error(sup));
        s.residual_sq.push_back(stats::mean(r2));
        s.residual_sq_se.push_back(stats::standard_error(r2));
        s.qv_bound.push_back(stats::mean(qv));
    }
    EstimatorReport d;
    d.name = "reconstruction.sup_error_decreasing";
    d.sample_count = n;
    d.estimate = s.sup_error;
    d.standard_error = s.sup_error_se;
    d.rule = ToleranceRule::decreasing();
    d.details["mode_sharp"] = o.mode == ReconstructionMode::SharpLimit ? 1.0 : 0.0;
    s.reports.push_back(d.finalize());

    EstimatorReport b;
    b.name = "reconstruction.residual_within_qv_bound";
    b.sample_count = n;
    b.estimate = s.residual_sq;
    b.standard_error = s.residual_sq_se;
    b.reference = s.qv_bound;
    b.rule = ToleranceRule::at_most_times(o.qv_factor);
    s.reports.push_back(b.finalize());
    return s;
}

// ---------------------------------------------------------------- observables, ergodicity, stationarity

template <std::size_t D>
struct Observable {
    std::string name;
    std::function<double(const Configuration<D>&)> fn;
};

/// Observables sampled every `every` steps along one trajectory (t = every dt, 2 every dt, ...).
template <std::size_t D>
std::vector<std::vector<double>> observe_along(const CoupledState<D>& initial, double T, const IntegratorParams& p, const PairPotential& pot,
                                               std::uint64_t seed, const std::vector<Observable<D>>& obs, std::size_t every)
{
    if (every < 1) throw UsageError("sampling interval must be >= 1 step");
    const std::size_t nsteps = step_count(T, p.dt);
    CoupledIntegrator<D> it(initial.env.box(), pot, p);
    it.load(initial);
    RandomStream rng(seed);
    std::vector<std::vector<double>> out(obs.size());
    std::vector<Vec<D>> y;
    for (std::size_t k = 1; k <= nsteps; ++k) {
        it.step(rng);
        if (k % every) continue;
        it.env_positions(y);
        const Configuration<D> c(initial.env.box(), y);
        for (std::size_t j = 0; j < obs.size(); ++j) out[j].push_back(obs[j].fn(c));
    }
    return out;
}

/// Time average of a long-trajectory series against an equilibrium sample of the same
/// observable. Both standard errors come from batch means.
inline EstimatorReport ergodicity_time_average(const std::string& name, const std::vector<double>& series, const std::vector<double>& ensemble,
                                               double k_se = 3.0, std::size_t batches = 20)
{
    if (series.empty() || ensemble.empty()) throw UsageError("ergodicity check needs non-empty series");
    EstimatorReport r;
    r.name = "ergodicity." + name;
    r.sample_count = series.size();
    const double ta = stats::mean(series), em = stats::mean(ensemble);
    r.estimate = {ta - em};
    r.standard_error = {stats::combined_se(stats::batch_means_se(series, batches), stats::batch_means_se(ensemble, batches))};
    r.reference = {0.0};
    r.details["time_average"] = ta;
    r.details["ensemble_mean"] = em;
    r.rule = ToleranceRule::within_se(k_se);
    return r.finalize();
}

/// Time averages from two different starts.
inline EstimatorReport ergodicity_two_starts(const std::string& name, const std::vector<double>& a, const std::vector<double>& b, double k_se = 3.0,
                                             std::size_t batches = 20)
{
    auto r = ergodicity_time_average(name, a, b, k_se, batches);
    r.name = "ergodicity.starts." + name;
    r.details["time_average_b"] = r.details["ensemble_mean"];
    r.details.erase("ensemble_mean");
    return r;
}

/// Environment after running the coupled dynamics for time T.
template <std::size_t D>
Configuration<D> evolve_environment(const Configuration<D>& env, double T, const IntegratorParams& p, const PairPotential& pot, std::uint64_t seed)
{
    const std::size_t nsteps = step_count(T, p.dt);
    CoupledIntegrator<D> it(env.box(), pot, p);
    it.load(CoupledState<D>{env});
    RandomStream rng(seed);
    for (std::size_t k = 0; k < nsteps; ++k) it.step(rng);
    return it.state().env;
}

/// Observable means over equilibrium samples at time 0 and after evolving each for T.
template <std::size_t D>
std::vector<EstimatorReport> stationarity_check(const std::vector<Configuration<D>>& samples, double T, const IntegratorParams& p,
                                                const PairPotential& pot, std::uint64_t seed, const std::vector<Observable<D>>& obs,
                                                std::size_t workers = 1, double k_se = 3.0)
{
    if (samples.size() < 2) throw UsageError("stationarity check needs at least 2 samples");
    const std::size_t n = samples.size();
    std::vector<Configuration<D>> evolved(n);
    parallel_for(n, workers, [&](std::size_t i) { evolved[i] = evolve_environment(samples[i], T, p, pot, derive_seed(seed, i)); });
    std::vector<EstimatorReport> out;
    for (const auto& o : obs) {
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = o.fn(samples[i]);
            b[i] = o.fn(evolved[i]);
        }
        EstimatorReport r;
        r.name = "stationarity." + o.name;
        r.sample_count = n;
        r.estimate = {stats::mean(b) - stats::mean(a)};
        r.standard_error = {stats::combined_se(stats::standard_error(a), stats::standard_error(b))};
        r.reference = {0.0};
        r.details["mean_0"] = stats::mean(a);
        r.details["mean_T"] = stats::mean(b);
        r.rule = ToleranceRule::within_se(k_se);
        out.push_back(r.finalize());
    }
    return out;
}

// ---------------------------------------------------------------- integration by parts, symmetry

/// E[grad_v F] = -E[F B_v], checked on the paired difference grad_v F + F B_v.
template <std::size_t D>
EstimatorReport ibp_check(const CylinderFunction<D>& F, const VectorField<D>& v, const std::vector<Configuration<D>>& samples,
                          const PairPotential& pot, double k_se = 3.0, std::size_t batches = 20)
{
    if (samples.empty()) throw UsageError("integration-by-parts check needs samples");
    std::vector<double> lhs, rhs, diff;
    for (const auto& c : samples) {
        const auto J = cylinder_jets(F, c);
        const auto E = environment_forces(c, pot);
        auto G = gradients(F, J);
        G.per_particle.resize(c.size(), zero_vec<D>());
        const double l = directional_gradient(G, v, c);
        const double r = -F.outer.value(J.s) * drift_Bv(v, c, E);
        lhs.push_back(l);
        rhs.push_back(r);
        diff.push_back(l - r);
    }
    EstimatorReport r;
    r.name = "ibp.directional";
    r.sample_count = samples.size();
    r.estimate = {stats::mean(diff)};
    r.standard_error = {stats::batch_means_se(diff, batches)};
    r.reference = {0.0};
    r.details["lhs"] = stats::mean(lhs);
    r.details["rhs"] = stats::mean(rhs);
    r.rule = ToleranceRule::within_se(k_se);
    return r.finalize();
}

/// E[F grad_gamma G] = -E[grad_gamma F G] + E[<grad phi, gamma> F G], per coordinate.
template <std::size_t D>
EstimatorReport ibp_aggregate_check(const CylinderFunction<D>& F, const CylinderFunction<D>& Gf, const std::vector<Configuration<D>>& samples,
                                    const PairPotential& pot, double k_se = 3.0, std::size_t batches = 20)
{
    if (samples.empty()) throw UsageError("integration-by-parts check needs samples");
    std::vector<std::vector<double>> diff(D);
    for (const auto& c : samples) {
        const auto JF = cylinder_jets(F, c);
        const auto JG = cylinder_jets(Gf, c);
        const double f = F.outer.value(JF.s), g = Gf.outer.value(JG.s);
        const Vec<D> gF = F.inner.empty() ? zero_vec<D>() : gradients(F, JF).aggregate;
        const Vec<D> gG = Gf.inner.empty() ? zero_vec<D>() : gradients(Gf, JG).aggregate;
        const Vec<D> t = tag_drift(c, pot);
        for (std::size_t k = 0; k < D; ++k) diff[k].push_back(f * gG[k] + gF[k] * g - t[k] * f * g);
    }
    EstimatorReport r;
    r.name = "ibp.aggregate";
    r.sample_count = samples.size();
    for (std::size_t k = 0; k < D; ++k) {
        r.estimate.push_back(stats::mean(diff[k]));
        r.standard_error.push_back(stats::batch_means_se(diff[k], batches));
        r.reference.push_back(0.0);
    }
    r.rule = ToleranceRule::within_se(k_se);
    return r.finalize();
}

/// E[-L_env F G] = E[Gamma(F, G)], and the same with F and G swapped.
template <std::size_t D>
EstimatorReport generator_symmetry_check(const CylinderFunction<D>& F, const CylinderFunction<D>& Gf, const std::vector<Configuration<D>>& samples,
                                         const PairPotential& pot, double k_se = 3.0, std::size_t batches = 20)
{
    if (samples.empty()) throw UsageError("symmetry check needs samples");
    std::vector<double> d1, d2, lf, gam;
    for (const auto& c : samples) {
        const auto JF = cylinder_jets(F, c);
        const auto JG = cylinder_jets(Gf, c);
        const auto E = environment_forces(c, pot);
        auto GF = gradients(F, JF);
        auto GG = gradients(Gf, JG);
        GF.per_particle.resize(c.size(), zero_vec<D>());
        GG.per_particle.resize(c.size(), zero_vec<D>());
        const double f = F.outer.value(JF.s), g = Gf.outer.value(JG.s);
        const double LF = generator_env(F, JF, E), LG = generator_env(Gf, JG, E);
        const double cdc = carre_du_champ(GF, GG);
        d1.push_back(-LF * g - cdc);
        d2.push_back(-LG * f - cdc);
        lf.push_back(-LF * g);
        gam.push_back(cdc);
    }
    EstimatorReport r;
    r.name = "generator.symmetry";
    r.sample_count = samples.size();
    r.estimate = {stats::mean(d1), stats::mean(d2)};
    r.standard_error = {stats::batch_means_se(d1, batches), stats::batch_means_se(d2, batches)};
    r.reference = {0.0, 0.0};
    r.details["minus_LF_G"] = stats::mean(lf);
    r.details["dirichlet"] = stats::mean(gam);
    r.rule = ToleranceRule::within_se(k_se);
    return r.finalize();
}

// ---------------------------------------------------------------- short-time generator oracle

struct FeynmanKacOptions {
    /// Shortest horizon; runs at 2 delta and 4 delta reuse the same noise.
    double delta = 1e-4;
    /// Steps per horizon. The step size scales with the horizon so that every first-order
    /// term, time discretization included, is proportional to delta.
    std::size_t steps = 1;
    std::size_t paths = 4000;
    /// Subtract the Ito martingale sum grad F . noise, which has mean zero.
    bool control_variate = true;
    std::size_t workers = 1;
    double k_se = 3.0;
};

namespace detail {

/// m(h) = (E[G after `steps` steps of size h / steps] - G(x)) / h at h = delta, 2 delta, 4 delta.
/// The estimate is 2 m(delta) - m(2 delta); the same combination one level up bounds its
/// remaining second-order bias, which is added as slack. `value(it)` evaluates G at the
/// integrator state; `grad(it, g)` gives the control-variate weights before a step.
template <std::size_t D, class Value, class Gradient>
EstimatorReport fk_estimate(const std::string& name, const CoupledState<D>& start, double reference, const PairPotential& pot,
                            const IntegratorParams& p, std::uint64_t seed, const FeynmanKacOptions& o, Value&& value, Gradient&& grad)
{
    if (!(o.delta > 0.0) || o.steps == 0) throw UsageError("need delta > 0 and at least one step");
    if (o.paths < 2) throw UsageError("need at least 2 paths");
    const std::array<double, 3> horizon{o.delta, 2.0 * o.delta, 4.0 * o.delta};
    std::array<std::vector<double>, 3> z;
    for (auto& v : z) v.resize(o.paths);
    parallel_for(o.paths, o.workers, [&](std::size_t i) {
        std::vector<Vec<D>> gr;
        for (std::size_t h = 0; h < 3; ++h) {
            IntegratorParams q = p;
            q.dt = horizon[h] / static_cast<double>(o.steps);
            CoupledIntegrator<D> it(start.env.box(), pot, q);
            it.load(start);
            RandomStream rng(derive_seed(seed, i));
            const double g0 = value(it);
            double m = 0.0;
            for (std::size_t k = 0; k < o.steps; ++k) {
                if (o.control_variate) grad(it, gr);
                it.step(rng);
                if (o.control_variate) {
                    const auto& w = it.last_noise();
                    for (std::size_t r = 0; r < w.size(); ++r) m += dot(gr[r], w[r]);
                }
            }
            z[h][i] = (value(it) - g0 - m) / horizon[h];
        }
    });
    std::vector<double> e(o.paths), e2(o.paths);
    for (std::size_t i = 0; i < o.paths; ++i) {
        e[i] = 2.0 * z[0][i] - z[1][i];
        e2[i] = 2.0 * z[1][i] - z[2][i];
    }
    const double est = stats::mean(e), est2 = stats::mean(e2);
    EstimatorReport r;
    r.name = name;
    r.sample_count = o.paths;
    r.estimate = {est};
    r.standard_error = {stats::standard_error(e)};
    r.reference = {reference};
    r.details["m_delta"] = stats::mean(z[0]);
    r.details["m_2delta"] = stats::mean(z[1]);
    r.details["m_4delta"] = stats::mean(z[2]);
    r.details["delta"] = o.delta;
    r.details["steps"] = static_cast<double>(o.steps);
    // The extrapolated value has bias ~ c delta^2; one level up it is 4 c delta^2.
    r.rule = ToleranceRule::within_se(o.k_se, std::fabs(est2 - est) / 3.0);
    return r.finalize();
}

} // namespace detail

/// Short-time Monte Carlo estimate of L_env F(gamma), compared with generator_env.
template <std::size_t D>
EstimatorReport feynman_kac_env(const CylinderFunction<D>& F, const Configuration<D>& gamma, const PairPotential& pot, const IntegratorParams& p,
                                std::uint64_t seed, const FeynmanKacOptions& o = {})
{
    const TorusBox<D> box = gamma.box();
    auto value = [&](const CoupledIntegrator<D>& it) {
        std::vector<Vec<D>> y;
        it.env_positions(y);
        return eval(F, Configuration<D>(box, y));
    };
    // Martingale part of F(gamma_t): grad^Gamma F(y_p) . (n_p - n_tag).
    auto grad = [&](const CoupledIntegrator<D>& it, std::vector<Vec<D>>& g) {
        std::vector<Vec<D>> y;
        it.env_positions(y);
        const Configuration<D> c(box, y);
        g.assign(y.size() + 1, zero_vec<D>());
        if (F.inner.empty()) return;
        const auto G = gradients(F, cylinder_jets(F, c));
        for (std::size_t q = 0; q < y.size(); ++q) {
            g[q + 1] = G.per_particle[q];
            g[0] -= G.per_particle[q];
        }
    };
    return detail::fk_estimate<D>("feynman_kac.env", CoupledState<D>{gamma}, generator_env(F, gamma, pot), pot, p, seed, o, value, grad);
}

/// Short-time Monte Carlo estimate of L_coup (f F)(xi, gamma), compared with generator_coup.
template <std::size_t D>
EstimatorReport feynman_kac_coup(const TestFunction<D>& f, const CylinderFunction<D>& F, const Vec<D>& xi, const Configuration<D>& gamma,
                                 const PairPotential& pot, const IntegratorParams& p, std::uint64_t seed, const FeynmanKacOptions& o = {})
{
    const TorusBox<D> box = gamma.box();
    auto value = [&](const CoupledIntegrator<D>& it) {
        std::vector<Vec<D>> y;
        it.env_positions(y);
        return f.value(box.wrap(it.xi())) * eval(F, Configuration<D>(box, y));
    };
    // d(f F) martingale part: F grad f . n_tag + f grad^Gamma F(y_p) . (n_p - n_tag).
    auto grad = [&](const CoupledIntegrator<D>& it, std::vector<Vec<D>>& g) {
        std::vector<Vec<D>> y;
        it.env_positions(y);
        const Configuration<D> c(box, y);
        const auto J = cylinder_jets(F, c);
        const double Fv = F.outer.value(J.s);
        const Jet<D> fx = f.jet(box.wrap(it.xi()));
        g.assign(y.size() + 1, zero_vec<D>());
        g[0] = Fv * fx.gradient;
        if (F.inner.empty()) return;
        const auto G = gradients(F, J);
        for (std::size_t q = 0; q < y.size(); ++q) {
            g[q + 1] = fx.value * G.per_particle[q];
            g[0] -= fx.value * G.per_particle[q];
        }
    };
    CoupledState<D> s{gamma};
    s.xi = xi;
    return detail::fk_estimate<D>("feynman_kac.coup", s, generator_coup(f, F, xi, gamma, pot), pot, p, seed, o, value, grad);
}

} // namespace tagdiff

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tagdiff/errors.hpp"
#include "tagdiff/potential.hpp"
#include "tagdiff/quadrature.hpp"

namespace tagdiff {

/// Radial profile phi(x) = u(|x|) as seen by the auditor. Wraps a PairPotential
/// (always its untruncated base) or an arbitrary radial law.
struct RadialProfile {
    std::function<double(double)> value;
    std::function<double(double)> derivative;
    /// Characteristic length; sets quadrature panels and the core probe radius.
    double scale = 1.0;
    std::size_t dimension = 3;
    /// Radius below which the profile is treated as +inf (0 for bounded profiles).
    double core = 0.0;

    static RadialProfile from(const PairPotential& pot)
    {
        const PairPotential base = pot.untruncated();
        RadialProfile p;
        p.value = [base](double r) { return base.base_radial(r); };
        p.derivative = [base](double r) { return base.base_radial_derivative(r); };
        p.scale = base.sigma();
        p.dimension = base.dimension();
        p.core = base.core_radius();
        return p;
    }

    /// u(r) = -a (1 + r)^{-d}: attractive tail too fat for lower regularity.
    static RadialProfile algebraic_well(std::size_t d, double a = 1.0)
    {
        if (d < 1 || d > 3) throw UsageError("dimension must be 1, 2 or 3");
        const double dd = static_cast<double>(d);
        RadialProfile p;
        p.value = [a, dd](double r) { return -a * std::pow(1.0 + r, -dd); };
        p.derivative = [a, dd](double r) { return a * dd * std::pow(1.0 + r, -dd - 1.0); };
        p.scale = 1.0;
        p.dimension = d;
        return p;
    }
};

enum class Verdict { Pass, Fail, Inconclusive };

inline const char* to_string(Verdict v) noexcept
{
    switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::Inconclusive: return "inconclusive";
    }
    return "?";
}

inline Verdict verdict_of(Convergence c)
{
    switch (c) {
    case Convergence::Convergent: return Verdict::Pass;
    case Convergence::Divergent: return Verdict::Fail;
    default: return Verdict::Inconclusive;
    }
}

struct AuditReport {
    std::size_t dimension = 0;
    double integral_I = 0.0;
    Convergence status_I = Convergence::Inconclusive;
    double integral_DL1 = 0.0;
    Convergence status_DL1 = Convergence::Inconclusive;
    std::map<double, double> integral_DLp;
    std::map<double, Convergence> status_DLp;
    double lr_envelope_integral = 0.0;
    Convergence status_LR = Convergence::Inconclusive;
    bool lr_envelope_ok = false;
    /// Core integral of the decreasing minorant; inf/NaN-free but may be huge.
    double ss_core_integral = 0.0;
    Convergence status_SS_core = Convergence::Inconclusive;
    bool nonnegative = false;
    bool ss_heuristic_ok = false;
    std::map<std::string, Verdict> verdict;
    std::vector<std::string> diagnostics;

    /// True unless some condition failed or could not be decided.
    bool all_pass() const
    {
        return std::all_of(verdict.begin(), verdict.end(), [](const auto& kv) { return kv.second == Verdict::Pass; });
    }
};

namespace detail {

/// Geometric grid t_0 < ... < t_m with t_{k+1} = ratio * t_k.
inline std::vector<double> geometric_grid(double lo, double hi, double ratio)
{
    std::vector<double> g;
    for (double t = lo; t < hi; t *= ratio) g.push_back(t);
    g.push_back(hi);
    return g;
}

/// Integral of the decreasing envelope psi(t) = sup_{s >= t} max(-u(s), 0) against
/// t^{d-1}dt from 0 to each limit, psi taken as a step function on a fine grid.
/// Returns partial integrals at limits first_limit * 2^k, k = 0..doublings.
inline std::vector<double> envelope_history(const RadialProfile& p, double first_limit, const QuadratureParams& qp,
                                            const std::function<double(double)>& user_envelope)
{
    const double d = static_cast<double>(p.dimension);
    const double t_min = 1e-6 * p.scale;
    std::vector<double> limits;
    for (int k = 0; k <= qp.doublings; ++k) limits.push_back(first_limit * std::ldexp(1.0, k));
    auto grid = geometric_grid(t_min, 2.0 * limits.back(), 1.0 + 1e-3);
    grid.insert(grid.end(), limits.begin(), limits.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    const std::size_t m = grid.size();
    std::vector<double> sup(m, 0.0);
    double running = 0.0;
    for (std::size_t k = m; k-- > 0;) {
        const double t = grid[k];
        double neg = 0.0;
        if (user_envelope) {
            neg = std::fmax(user_envelope(t), 0.0);
        } else if (t >= p.core) {
            const double u = p.value(t);
            neg = std::isfinite(u) ? std::fmax(-u, 0.0) : 0.0;
        }
        running = user_envelope ? neg : std::fmax(running, neg);
        sup[k] = running;
    }

    std::vector<double> history;
    double acc = sup[0] * std::pow(t_min, d) / d;
    std::size_t next = 0;
    for (std::size_t k = 0; k + 1 < m && next < limits.size(); ++k) {
        acc += sup[k] * (std::pow(grid[k + 1], d) - std::pow(grid[k], d)) / d;
        if (grid[k + 1] == limits[next]) {
            history.push_back(acc);
            ++next;
        }
    }
    return history;
}

} // namespace detail

/// Numerical audit of the admissibility conditions for a radial interaction on R^d.
///
/// (I)    integral of |1 - e^{-phi}|
/// (DLp)  integrals of |grad phi| e^{-phi} and |grad phi|^p e^{-phi}
/// (LR)   integral of psi(t) t^{d-1} for the decreasing envelope of phi^-
/// (SS)   sufficient hard-core test: the greatest decreasing minorant theta of phi
///        on (0, scale] has a divergent integral against s^{d-1}, or phi >= 0.
///
/// Divergence uses the doubling-limit rule of QuadratureParams. Quadrature trouble
/// turns a verdict inconclusive rather than throwing.
inline AuditReport audit_conditions(const RadialProfile& p, const std::vector<double>& p_values, const QuadratureParams& qp = {},
                                    const std::function<double(double)>& user_envelope = {})
{
    for (double pv : p_values) {
        if (!(pv >= 2.0)) throw UsageError("audit exponent p must be >= 2");
    }
    AuditReport rep;
    rep.dimension = p.dimension;
    const double area = unit_sphere_area(p.dimension);
    const int dm1 = static_cast<int>(p.dimension) - 1;
    const double first = qp.initial_limit * p.scale;
    const double panel = 0.25 * p.scale;

    auto radial_weight = [&](double r) { return area * std::pow(r, dm1); };

    auto integrand_I = [&](double r) {
        if (r < p.core) return radial_weight(r);
        const double u = p.value(r);
        if (!std::isfinite(u)) return radial_weight(r);
        return std::fabs(-std::expm1(-u)) * radial_weight(r);
    };
    const auto I = improper_integral(integrand_I, 0.0, first, panel, qp);
    rep.integral_I = I.value;
    rep.status_I = I.status;
    if (!I.quadrature_ok) rep.diagnostics.push_back("quadrature did not reach tolerance for (I)");

    auto dl_integrand = [&](double pw) {
        return [&, pw](double r) {
            if (r < p.core || r == 0.0) return 0.0;
            const double u = p.value(r);
            if (!std::isfinite(u)) return 0.0;
            const double g = std::fabs(p.derivative(r));
            if (g == 0.0) return 0.0;
            return std::exp(pw * std::log(g) - u) * radial_weight(r);
        };
    };
    const auto DL1 = improper_integral(dl_integrand(1.0), 0.0, first, panel, qp);
    rep.integral_DL1 = DL1.value;
    rep.status_DL1 = DL1.status;
    if (!DL1.quadrature_ok) rep.diagnostics.push_back("quadrature did not reach tolerance for |grad phi| e^{-phi}");

    Convergence dl = DL1.status;
    for (double pv : p_values) {
        const auto r = improper_integral(dl_integrand(pv), 0.0, first, panel, qp);
        rep.integral_DLp[pv] = r.value;
        rep.status_DLp[pv] = r.status;
        if (!r.quadrature_ok) rep.diagnostics.push_back("quadrature did not reach tolerance for DL p=" + std::to_string(pv));
        if (r.status == Convergence::Divergent) dl = Convergence::Divergent;
        else if (r.status == Convergence::Inconclusive && dl != Convergence::Divergent) dl = Convergence::Inconclusive;
    }

    const auto env = detail::envelope_history(p, first, qp, user_envelope);
    rep.lr_envelope_integral = env.back();
    rep.status_LR = classify_doubling(env, qp);
    rep.lr_envelope_ok = rep.status_LR == Convergence::Convergent;

    // Hard-core probe. Sample phi to detect nonnegativity and to build theta(t) = inf_{s<=t} phi(s).
    const double r_ss = p.scale;
    const double probe_lo = r_ss * std::ldexp(1.0, -(qp.doublings + 2));
    const auto grid = detail::geometric_grid(probe_lo, first * std::ldexp(1.0, qp.doublings), 1.0 + 1e-3);
    rep.nonnegative = std::all_of(grid.begin(), grid.end(), [&](double t) { return t < p.core || !(p.value(t) < 0.0); });
    // The running minimum over a geometric grid is monotone; tabulate once for quadrature.
    std::vector<double> core_grid = detail::geometric_grid(probe_lo, r_ss, 1.0 + 1e-3);
    std::vector<double> theta_tab(core_grid.size());
    {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < core_grid.size(); ++k) {
            const double u = core_grid[k] < p.core ? std::numeric_limits<double>::infinity() : p.value(core_grid[k]);
            m = std::fmin(m, u);
            theta_tab[k] = m;
        }
    }
    std::vector<double> core_hist;
    {
        // Lower Riemann sums of the decreasing theta over [r_ss 2^{-k-1}, r_ss], k = 0..doublings.
        const double d = static_cast<double>(p.dimension);
        double acc = 0.0;
        std::size_t k = core_grid.size() - 1;
        double limit = r_ss / 2.0;
        while (true) {
            while (k > 0 && core_grid[k - 1] >= limit) {
                const double a = core_grid[k - 1];
                const double b = core_grid[k];
                const double th = std::isfinite(theta_tab[k]) ? theta_tab[k] : std::numeric_limits<double>::max();
                acc += th * (std::pow(b, d) - std::pow(a, d)) / d;
                --k;
            }
            core_hist.push_back(acc);
            if (static_cast<int>(core_hist.size()) > qp.doublings || k == 0) break;
            limit /= 2.0;
        }
    }
    rep.ss_core_integral = core_hist.back() * area;
    rep.status_SS_core = classify_doubling(core_hist, qp);
    rep.ss_heuristic_ok = rep.nonnegative || (rep.status_SS_core == Convergence::Divergent && rep.lr_envelope_ok);

    rep.verdict["I"] = verdict_of(rep.status_I);
    rep.verdict["DL"] = verdict_of(dl);
    rep.verdict["LR"] = verdict_of(rep.status_LR);
    if (rep.nonnegative) {
        rep.verdict["SS"] = Verdict::Pass;
        rep.diagnostics.push_back("potential is nonnegative: superstability holds with B = 0");
    } else if (rep.status_SS_core == Convergence::Divergent) {
        rep.verdict["SS"] = rep.lr_envelope_ok ? Verdict::Pass : Verdict::Inconclusive;
    } else {
        rep.verdict["SS"] = Verdict::Inconclusive;
        rep.diagnostics.push_back("no divergent hard core found; superstability not established");
    }
    if (rep.status_LR == Convergence::Inconclusive) {
        rep.diagnostics.push_back("envelope tail neither converged nor diverged within the doubling budget");
    }
    return rep;
}

inline AuditReport audit_conditions(const PairPotential& pot, const std::vector<double>& p_values, const QuadratureParams& qp = {})
{
    return audit_conditions(RadialProfile::from(pot), p_values, qp);
}

inline nlohmann::json to_json(const AuditReport& r)
{
    using nlohmann::json;
    json dlp = json::object();
    for (const auto& [p, v] : r.integral_DLp) {
        char key[32];
        std::snprintf(key, sizeof key, "%g", p);
        dlp[key] = {{"value", v}, {"status", to_string(r.status_DLp.at(p))}};
    }
    json verdict = json::object();
    for (const auto& [k, v] : r.verdict) verdict[k] = to_string(v);
    return {
        {"dimension", r.dimension},
        {"integral_I", {{"value", r.integral_I}, {"status", to_string(r.status_I)}}},
        {"integral_DL1", {{"value", r.integral_DL1}, {"status", to_string(r.status_DL1)}}},
        {"integral_DLp", dlp},
        {"lr_envelope", {{"tail_integral", r.lr_envelope_integral}, {"status", to_string(r.status_LR)}, {"ok", r.lr_envelope_ok}}},
        {"ss_heuristic", {{"core_integral", r.ss_core_integral}, {"status", to_string(r.status_SS_core)}, {"nonnegative", r.nonnegative}, {"ok", r.ss_heuristic_ok}}},
        {"verdict", verdict},
        {"all_pass", r.all_pass()},
        {"diagnostics", r.diagnostics},
    };
}

} // namespace tagdiff

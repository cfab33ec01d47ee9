#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "tagdiff/errors.hpp"

namespace tagdiff {

/// Knobs for radial quadrature and the doubling-limit divergence rule.
struct QuadratureParams {
    double rel_tol = 1e-11;
    unsigned max_depth = 25;
    /// First upper limit of an improper integral, in units of the potential's length scale.
    double initial_limit = 8.0;
    /// An integral is divergent if each of this many doublings grows it by more than growth_threshold.
    int doublings = 8;
    double growth_threshold = 0.01;
    /// ... and convergent once two consecutive doublings change it by less than this (relative).
    double convergence_threshold = 1e-6;
};

enum class Convergence { Convergent, Divergent, Inconclusive };

inline const char* to_string(Convergence c) noexcept
{
    switch (c) {
    case Convergence::Convergent: return "convergent";
    case Convergence::Divergent: return "divergent";
    case Convergence::Inconclusive: return "inconclusive";
    }
    return "?";
}

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;
    bool ok = true;
};

/// Adaptive 31-point Gauss-Kronrod on a finite interval.
template <class F>
QuadratureResult integrate(F&& f, double a, double b, const QuadratureParams& qp = {})
{
    if (!(b > a)) return {};
    double err = 0.0;
    double l1 = 0.0;
    const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, qp.max_depth, qp.rel_tol, &err, &l1);
    const bool ok = std::isfinite(v) && (err <= std::fmax(1e3 * qp.rel_tol * l1, 1e-300) || err <= 1e-14 * (1.0 + std::fabs(v)));
    return {v, err, ok};
}

/// Surface area of the unit sphere in R^d (d = 1 counts the two endpoints).
inline double unit_sphere_area(std::size_t d)
{
    switch (d) {
    case 1: return 2.0;
    case 2: return 2.0 * std::numbers::pi;
    case 3: return 4.0 * std::numbers::pi;
    default: break;
    }
    throw UsageError("unit_sphere_area: dimension must be 1, 2 or 3");
}

struct ImproperResult {
    double value = 0.0;
    Convergence status = Convergence::Inconclusive;
    /// Partial integrals at each upper (or lower) limit visited.
    std::vector<double> history;
    bool quadrature_ok = true;
};

/// Classify a sequence of partial integrals taken at successively doubled limits.
inline Convergence classify_doubling(const std::vector<double>& history, const QuadratureParams& qp)
{
    if (history.empty()) return Convergence::Inconclusive;
    int small_changes = 0;
    int growth_run = 0;
    for (std::size_t k = 1; k < history.size(); ++k) {
        const double prev = history[k - 1];
        const double cur = history[k];
        const double change = std::fabs(cur - prev);
        const double scale = std::fmax(std::fabs(cur), std::fabs(prev));
        const bool small = change == 0.0 || change <= qp.convergence_threshold * scale;
        small_changes = small ? small_changes + 1 : 0;
        if (small_changes >= 2) return Convergence::Convergent;
        const bool grew = std::fabs(cur) > (1.0 + qp.growth_threshold) * std::fabs(prev);
        growth_run = grew ? growth_run + 1 : 0;
    }
    if (growth_run >= qp.doublings) return Convergence::Divergent;
    return Convergence::Inconclusive;
}

/// Integral of f over [lower, inf) by the doubling-limit rule. The first upper limit is
/// `first_limit`; panels below it are split geometrically starting at `panel_start`.
template <class F>
ImproperResult improper_integral(F&& f, double lower, double first_limit, double panel_start, const QuadratureParams& qp = {})
{
    ImproperResult out;
    double acc = 0.0;
    double a = lower;
    double b = std::fmax(panel_start, lower);
    while (b < first_limit) {
        if (b > a) {
            const auto piece = integrate(f, a, b, qp);
            out.quadrature_ok = out.quadrature_ok && piece.ok;
            acc += piece.value;
            a = b;
        }
        b *= 2.0;
    }
    {
        const auto piece = integrate(f, a, first_limit, qp);
        out.quadrature_ok = out.quadrature_ok && piece.ok;
        acc += piece.value;
    }
    out.history.push_back(acc);
    double limit = first_limit;
    for (int k = 0; k < qp.doublings; ++k) {
        const auto piece = integrate(f, limit, 2.0 * limit, qp);
        out.quadrature_ok = out.quadrature_ok && piece.ok;
        acc += piece.value;
        limit *= 2.0;
        out.history.push_back(acc);
        const auto status = classify_doubling(out.history, qp);
        if (status == Convergence::Convergent) break;
    }
    out.value = acc;
    out.status = classify_doubling(out.history, qp);
    if (!out.quadrature_ok && out.status == Convergence::Convergent) out.status = Convergence::Inconclusive;
    return out;
}

/// Integral of f over (0, upper] probing the behaviour at 0 by halving the lower limit.
template <class F>
ImproperResult core_integral(F&& f, double upper, const QuadratureParams& qp = {})
{
    ImproperResult out;
    double lower = upper / 2.0;
    double acc = 0.0;
    {
        const auto piece = integrate(f, lower, upper, qp);
        out.quadrature_ok = piece.ok;
        acc = piece.value;
    }
    out.history.push_back(acc);
    for (int k = 0; k < qp.doublings; ++k) {
        const auto piece = integrate(f, lower / 2.0, lower, qp);
        out.quadrature_ok = out.quadrature_ok && piece.ok;
        acc += piece.value;
        lower /= 2.0;
        out.history.push_back(acc);
        if (!std::isfinite(acc)) break;
    }
    out.value = acc;
    out.status = std::isfinite(acc) ? classify_doubling(out.history, qp) : Convergence::Divergent;
    return out;
}

} // namespace tagdiff

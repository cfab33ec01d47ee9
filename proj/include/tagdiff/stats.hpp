#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "tagdiff/errors.hpp"

namespace tagdiff::stats {

/// Sums deviations from the first value, so a constant series averages to itself exactly.
inline double mean(const std::vector<double>& x)
{
    if (x.empty()) return 0.0;
    const double x0 = x.front();
    double s = 0.0;
    for (double v : x) s += v - x0;
    return x0 + s / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double variance(const std::vector<double>& x)
{
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

inline double standard_error(const std::vector<double>& x)
{
    if (x.size() < 2) return 0.0;
    return std::sqrt(variance(x) / static_cast<double>(x.size()));
}

/// Standard error of the mean of a correlated series from non-overlapping batch means.
inline double batch_means_se(const std::vector<double>& x, std::size_t batches = 20)
{
    if (x.size() < 2 * batches) return standard_error(x);
    const std::size_t len = x.size() / batches;
    std::vector<double> b(batches);
    for (std::size_t k = 0; k < batches; ++k) {
        double s = 0.0;
        for (std::size_t i = k * len; i < (k + 1) * len; ++i) s += x[i];
        b[k] = s / static_cast<double>(len);
    }
    return standard_error(b);
}

inline double combined_se(double a, double b) { return std::hypot(a, b); }

inline double covariance(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size()) throw UsageError("covariance: length mismatch");
    if (x.size() < 2) return 0.0;
    const double mx = mean(x), my = mean(y);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
    return s / static_cast<double>(x.size() - 1);
}

inline double correlation(const std::vector<double>& x, const std::vector<double>& y)
{
    const double sx = std::sqrt(variance(x)), sy = std::sqrt(variance(y));
    if (sx == 0.0 || sy == 0.0) return 0.0;
    return covariance(x, y) / (sx * sy);
}

inline double normal_cdf(double z)
{
    return boost::math::cdf(boost::math::normal_distribution<double>(), z);
}

/// Two-sided p-value for H0: correlation 0, via the Fisher transform.
inline double correlation_p_value(double r, std::size_t n)
{
    if (n < 4) return 1.0;
    const double z = std::atanh(std::clamp(r, -0.999999999, 0.999999999)) * std::sqrt(static_cast<double>(n) - 3.0);
    return 2.0 * (1.0 - normal_cdf(std::fabs(z)));
}

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double df = 0.0;
    bool reject(double alpha) const { return p_value < alpha; }
};

/// Pearson chi-square goodness of fit. Adjacent bins are merged until each expected
/// count is at least min_expected. df = bins - 1 - fitted_params.
inline TestResult chi_square_gof(const std::vector<double>& observed, const std::vector<double>& expected, std::size_t fitted_params = 0,
                                 double min_expected = 5.0)
{
    if (observed.size() != expected.size()) throw UsageError("chi_square_gof: length mismatch");
    std::vector<double> o, e;
    double ao = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        ao += observed[i];
        ae += expected[i];
        if (ae >= min_expected) {
            o.push_back(ao);
            e.push_back(ae);
            ao = ae = 0.0;
        }
    }
    if (ae > 0.0 || ao > 0.0) {
        if (e.empty()) {
            o.push_back(ao);
            e.push_back(ae);
        } else {
            o.back() += ao;
            e.back() += ae;
        }
    }
    TestResult r;
    for (std::size_t i = 0; i < o.size(); ++i) r.statistic += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
    const double df = static_cast<double>(o.size()) - 1.0 - static_cast<double>(fitted_params);
    r.df = df;
    if (df < 1.0) return r;
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), r.statistic));
    return r;
}

/// Kolmogorov limiting survival function Q(lambda) = 2 sum (-1)^{k-1} e^{-2 k^2 lambda^2}.
inline double kolmogorov_q(double lambda)
{
    if (lambda < 0.2) return 1.0;
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double t = std::exp(-2.0 * k * k * lambda * lambda);
        s += (k % 2 ? 2.0 : -2.0) * t;
        if (t < 1e-16) break;
    }
    return std::clamp(s, 0.0, 1.0);
}

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
inline TestResult ks_test(std::vector<double> x, const std::function<double(double)>& cdf)
{
    if (x.empty()) return {};
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    const double sn = std::sqrt(n);
    TestResult r;
    r.statistic = d;
    r.p_value = kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
    return r;
}

/// Anderson-Darling normality test with mean and variance estimated from the data.
/// statistic is A*^2 = A^2 (1 + 0.75/n + 2.25/n^2); p-value from the usual piecewise fit.
inline TestResult anderson_darling_normal(std::vector<double> x)
{
    const std::size_t n = x.size();
    if (n < 8) throw UsageError("Anderson-Darling needs at least 8 observations");
    const double m = mean(x);
    const double s = std::sqrt(variance(x));
    std::sort(x.begin(), x.end());
    double a2 = 0.0;
    const double nn = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double zi = (x[i] - m) / s;
        const double zj = (x[n - 1 - i] - m) / s;
        const double fi = std::clamp(normal_cdf(zi), 1e-300, 1.0 - 1e-16);
        const double fj = std::clamp(normal_cdf(zj), 1e-300, 1.0 - 1e-16);
        a2 += (2.0 * static_cast<double>(i) + 1.0) * (std::log(fi) + std::log1p(-fj));
    }
    a2 = -nn - a2 / nn;
    const double a = a2 * (1.0 + 0.75 / nn + 2.25 / (nn * nn));
    double p;
    if (a >= 0.6) p = std::exp(1.2937 - 5.709 * a + 0.0186 * a * a);
    else if (a >= 0.34) p = std::exp(0.9177 - 4.279 * a - 1.38 * a * a);
    else if (a >= 0.2) p = 1.0 - std::exp(-8.318 + 42.796 * a - 59.938 * a * a);
    else p = 1.0 - std::exp(-13.436 + 101.14 * a - 223.73 * a * a);
    TestResult r;
    r.statistic = a;
    r.p_value = std::clamp(p, 0.0, 1.0);
    return r;
}

struct OriginFit {
    double slope = 0.0;
    /// 1 - SSE / centred total sum of squares.
    double r_squared = 0.0;
};

/// Least squares y ~ slope * x through the origin.
inline OriginFit fit_through_origin(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.empty()) throw UsageError("fit_through_origin: bad input");
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += x[i] * y[i];
        sxx += x[i] * x[i];
    }
    OriginFit f;
    f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    const double my = mean(y);
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sse += (y[i] - f.slope * x[i]) * (y[i] - f.slope * x[i]);
        sst += (y[i] - my) * (y[i] - my);
    }
    f.r_squared = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
    return f;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

/// Ordinary least squares y ~ intercept + slope * x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) throw UsageError("fit_line: bad input");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw UsageError("fit_line: x has no spread");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - f.intercept - f.slope * x[i];
        sse += e * e;
    }
    f.r_squared = syy > 0.0 ? 1.0 - sse / syy : (sse == 0.0 ? 1.0 : 0.0);
    return f;
}

/// Jackknife standard error from leave-one-out estimates.
inline double jackknife_se(const std::vector<double>& loo)
{
    const std::size_t n = loo.size();
    if (n < 2) return 0.0;
    const double m = mean(loo);
    double s = 0.0;
    for (double v : loo) s += (v - m) * (v - m);
    return std::sqrt(s * static_cast<double>(n - 1) / static_cast<double>(n));
}

} // namespace tagdiff::stats

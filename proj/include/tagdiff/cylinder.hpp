#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "tagdiff/audit.hpp"
#include "tagdiff/configuration.hpp"
#include "tagdiff/errors.hpp"
#include "tagdiff/potential.hpp"
#include "tagdiff/quadrature.hpp"
#include "tagdiff/vec.hpp"

namespace tagdiff {

namespace smooth {

/// Quintic smoothstep 6t^5 - 15t^4 + 10t^3 clamped to [0, 1]; C2 with flat ends.
inline double step(double t) noexcept
{
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

inline double step_d1(double t) noexcept
{
    if (t <= 0.0 || t >= 1.0) return 0.0;
    const double u = t * (1.0 - t);
    return 30.0 * u * u;
}

inline double step_d2(double t) noexcept
{
    if (t <= 0.0 || t >= 1.0) return 0.0;
    return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
}

/// One-axis plateau: 1 on [lo, hi], 0 outside [lo - m, hi + m], smoothstep ramps between.
struct Ramp {
    double v = 0.0, d1 = 0.0, d2 = 0.0;
};

inline Ramp plateau(double u, double lo, double hi, double m) noexcept
{
    if (u <= lo - m || u >= hi + m) return {};
    if (u >= lo && u <= hi) return {1.0, 0.0, 0.0};
    if (u < lo) {
        const double t = (u - (lo - m)) / m;
        return {step(t), step_d1(t) / m, step_d2(t) / (m * m)};
    }
    const double t = ((hi + m) - u) / m;
    return {step(t), -step_d1(t) / m, step_d2(t) / (m * m)};
}

} // namespace smooth

enum class Primitive { Bump, SmoothCoordinate, GaussianClipped };

inline const char* to_string(Primitive p) noexcept
{
    switch (p) {
    case Primitive::Bump: return "bump";
    case Primitive::SmoothCoordinate: return "smooth-coordinate";
    case Primitive::GaussianClipped: return "gaussian-clipped";
    }
    return "?";
}

/// Value, gradient and Laplacian at one point.
template <std::size_t D>
struct Jet {
    double value = 0.0;
    Vec<D> gradient = zero_vec<D>();
    double laplacian = 0.0;
};

/// f = A(x) w(x): an amplitude law A times a C2 plateau window w that is 1 on the box
/// [center - half, center + half] and 0 outside its margin-widened copy.
///   bump:              A = amplitude
///   smooth-coordinate: A = amplitude * x[axis]
///   gaussian-clipped:  A = amplitude * exp(-|x - center|^2 / (2 width^2))
template <std::size_t D>
class TestFunction {
public:
    static TestFunction bump(double amplitude, const Vec<D>& center, const Vec<D>& half, double margin)
    {
        return TestFunction(Primitive::Bump, amplitude, 0, 1.0, center, half, margin);
    }

    static TestFunction smooth_coordinate(std::size_t axis, const Vec<D>& center, const Vec<D>& half, double margin,
                                          double amplitude = 1.0)
    {
        if (axis >= D) throw UsageError("smooth-coordinate axis out of range");
        return TestFunction(Primitive::SmoothCoordinate, amplitude, axis, 1.0, center, half, margin);
    }

    static TestFunction gaussian_clipped(double amplitude, const Vec<D>& center, double width, const Vec<D>& half, double margin)
    {
        if (!(width > 0.0)) throw UsageError("gaussian width must be positive");
        return TestFunction(Primitive::GaussianClipped, amplitude, 0, width, center, half, margin);
    }

    Primitive kind() const noexcept { return kind_; }
    double amplitude() const noexcept { return amplitude_; }
    std::size_t axis() const noexcept { return axis_; }
    double width() const noexcept { return width_; }
    const Vec<D>& center() const noexcept { return center_; }
    const Vec<D>& half() const noexcept { return half_; }
    double margin() const noexcept { return margin_; }

    /// Lower and upper corners of the support.
    Vec<D> support_lo() const
    {
        Vec<D> r;
        for (std::size_t k = 0; k < D; ++k) r[k] = center_[k] - half_[k] - margin_;
        return r;
    }
    Vec<D> support_hi() const
    {
        Vec<D> r;
        for (std::size_t k = 0; k < D; ++k) r[k] = center_[k] + half_[k] + margin_;
        return r;
    }

    /// True if the support fits in [-L/2, L/2]^d, so f is smooth as a periodic function.
    bool supported_in(const TorusBox<D>& box) const
    {
        const double h = box.half();
        const auto lo = support_lo(), hi = support_hi();
        for (std::size_t k = 0; k < D; ++k)
            if (lo[k] < -h || hi[k] > h) return false;
        return true;
    }

    Jet<D> jet(const Vec<D>& x) const
    {
        std::array<smooth::Ramp, D> r;
        for (std::size_t k = 0; k < D; ++k) {
            r[k] = smooth::plateau(x[k], center_[k] - half_[k], center_[k] + half_[k], margin_);
            if (r[k].v == 0.0) return {};
        }
        // w, grad w, lap w from prefix/suffix products of the per-axis ramps.
        std::array<double, D + 1> pre, suf;
        pre[0] = 1.0;
        suf[D] = 1.0;
        for (std::size_t k = 0; k < D; ++k) pre[k + 1] = pre[k] * r[k].v;
        for (std::size_t k = D; k-- > 0;) suf[k] = suf[k + 1] * r[k].v;
        const double w = pre[D];
        Vec<D> gw;
        double lw = 0.0;
        for (std::size_t k = 0; k < D; ++k) {
            const double others = pre[k] * suf[k + 1];
            gw[k] = r[k].d1 * others;
            lw += r[k].d2 * others;
        }

        double A = amplitude_, lA = 0.0;
        Vec<D> gA = zero_vec<D>();
        switch (kind_) {
        case Primitive::Bump: break;
        case Primitive::SmoothCoordinate:
            A = amplitude_ * x[axis_];
            gA[axis_] = amplitude_;
            break;
        case Primitive::GaussianClipped: {
            const Vec<D> dx = x - center_;
            const double s2 = width_ * width_;
            A = amplitude_ * std::exp(-0.5 * norm_sq(dx) / s2);
            gA = (-A / s2) * dx;
            lA = A * (norm_sq(dx) / (s2 * s2) - static_cast<double>(D) / s2);
            break;
        }
        }
        Jet<D> j;
        j.value = A * w;
        j.gradient = w * gA + A * gw;
        j.laplacian = lA * w + 2.0 * dot(gA, gw) + A * lw;
        return j;
    }

    double value(const Vec<D>& x) const { return jet(x).value; }
    Vec<D> gradient(const Vec<D>& x) const { return jet(x).gradient; }
    double laplacian(const Vec<D>& x) const { return jet(x).laplacian; }

private:
    TestFunction(Primitive kind, double amplitude, std::size_t axis, double width, const Vec<D>& center, const Vec<D>& half, double margin)
        : kind_(kind), amplitude_(amplitude), axis_(axis), width_(width), center_(center), half_(half), margin_(margin)
    {
        if (!(margin > 0.0)) throw UsageError("test function margin must be positive");
        for (std::size_t k = 0; k < D; ++k)
            if (!(half[k] >= 0.0)) throw UsageError("test function plateau half-widths must be >= 0");
    }

    Primitive kind_;
    double amplitude_;
    std::size_t axis_;
    double width_;
    Vec<D> center_;
    Vec<D> half_;
    double margin_;
};

/// v(x) = sum_m a_m h_m(x) with constant vectors a_m and test functions h_m.
template <std::size_t D>
class VectorField {
public:
    VectorField() = default;

    VectorField& add(const Vec<D>& a, const TestFunction<D>& h)
    {
        terms_.emplace_back(a, h);
        return *this;
    }

    const std::vector<std::pair<Vec<D>, TestFunction<D>>>& terms() const noexcept { return terms_; }
    bool is_zero() const noexcept { return terms_.empty(); }

    bool supported_in(const TorusBox<D>& box) const
    {
        for (const auto& t : terms_)
            if (!t.second.supported_in(box)) return false;
        return true;
    }

    Vec<D> value(const Vec<D>& x) const
    {
        Vec<D> v = zero_vec<D>();
        for (const auto& [a, h] : terms_) v += h.value(x) * a;
        return v;
    }

    double divergence(const Vec<D>& x) const
    {
        double s = 0.0;
        for (const auto& [a, h] : terms_) s += dot(a, h.gradient(x));
        return s;
    }

    /// J[k][l] = d v_k / d x_l
    std::array<Vec<D>, D> jacobian(const Vec<D>& x) const
    {
        std::array<Vec<D>, D> J{};
        for (const auto& [a, h] : terms_) {
            const Vec<D> g = h.gradient(x);
            for (std::size_t k = 0; k < D; ++k) J[k] += a[k] * g;
        }
        return J;
    }

private:
    std::vector<std::pair<Vec<D>, TestFunction<D>>> terms_;
};

/// Outer function g: R^N -> R of a cylinder function, with gradient and Hessian.
/// When no analytic Hessian is supplied, central differences of the gradient are used
/// and numeric_hessian() reports it; such Hessians are trusted to fd_tolerance.
class OuterFunction {
public:
    using Args = std::vector<double>;
    using ValueFn = std::function<double(const Args&)>;
    using GradFn = std::function<Args(const Args&)>;
    /// Row-major N x N.
    using HessFn = std::function<Args(const Args&)>;

    static constexpr double fd_tolerance = 1e-4;

    static OuterFunction constant(double c, std::size_t arity = 0)
    {
        return OuterFunction(
            "constant", arity, {c}, [c](const Args&) { return c; }, [arity](const Args&) { return Args(arity, 0.0); },
            [arity](const Args&) { return Args(arity * arity, 0.0); });
    }

    /// a . s + b
    static OuterFunction linear(Args a, double b = 0.0)
    {
        const std::size_t n = a.size();
        Args params = a;
        params.push_back(b);
        return OuterFunction(
            "linear", n, params,
            [a, b](const Args& s) {
                double v = b;
                for (std::size_t i = 0; i < a.size(); ++i) v += a[i] * s[i];
                return v;
            },
            [a](const Args&) { return a; }, [n](const Args&) { return Args(n * n, 0.0); });
    }

    /// sin(a . s + b)
    static OuterFunction sine(Args a, double b = 0.0)
    {
        return ridge("sine", std::move(a), b, [](double u) { return std::sin(u); }, [](double u) { return std::cos(u); },
                     [](double u) { return -std::sin(u); });
    }

    /// tanh(a . s + b)
    static OuterFunction tanh(Args a, double b = 0.0)
    {
        return ridge("tanh", std::move(a), b, [](double u) { return std::tanh(u); },
                     [](double u) {
                         const double t = std::tanh(u);
                         return 1.0 - t * t;
                     },
                     [](double u) {
                         const double t = std::tanh(u);
                         return -2.0 * t * (1.0 - t * t);
                     });
    }

    /// exp(-sum_i a_i s_i^2 / 2)
    static OuterFunction gaussian(Args a)
    {
        const std::size_t n = a.size();
        auto val = [a](const Args& s) {
            double q = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) q += a[i] * s[i] * s[i];
            return std::exp(-0.5 * q);
        };
        return OuterFunction(
            "gaussian", n, a, val,
            [a, val](const Args& s) {
                const double e = val(s);
                Args g(a.size());
                for (std::size_t i = 0; i < a.size(); ++i) g[i] = -a[i] * s[i] * e;
                return g;
            },
            [a, n, val](const Args& s) {
                const double e = val(s);
                Args h(n * n);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) h[i * n + j] = (a[i] * s[i] * a[j] * s[j] - (i == j ? a[i] : 0.0)) * e;
                return h;
            });
    }

    /// s0 / (R + s1), R > 0. Used with s1 >= 0 (a count-like statistic).
    static OuterFunction ratio(double R)
    {
        if (!(R > 0.0)) throw UsageError("ratio offset must be positive");
        return OuterFunction(
            "ratio", 2, {R}, [R](const Args& s) { return s[0] / (R + s[1]); },
            [R](const Args& s) {
                const double q = 1.0 / (R + s[1]);
                return Args{q, -s[0] * q * q};
            },
            [R](const Args& s) {
                const double q = 1.0 / (R + s[1]);
                return Args{0.0, -q * q, -q * q, 2.0 * s[0] * q * q * q};
            });
    }

    /// s0 * s1
    static OuterFunction product()
    {
        return OuterFunction(
            "product", 2, {}, [](const Args& s) { return s[0] * s[1]; }, [](const Args& s) { return Args{s[1], s[0]}; },
            [](const Args&) { return Args{0.0, 1.0, 1.0, 0.0}; });
    }

    /// Arbitrary g; an empty hess selects the finite-difference fallback.
    static OuterFunction custom(std::string name, std::size_t arity, ValueFn value, GradFn grad, HessFn hess = {})
    {
        if (!value || !grad) throw UsageError("custom outer function needs value and gradient");
        return OuterFunction(std::move(name), arity, {}, std::move(value), std::move(grad), std::move(hess));
    }

    const std::string& name() const noexcept { return name_; }
    const Args& params() const noexcept { return params_; }
    std::size_t arity() const noexcept { return arity_; }
    bool numeric_hessian() const noexcept { return !hess_; }

    double value(const Args& s) const
    {
        check(s);
        return value_(s);
    }

    Args gradient(const Args& s) const
    {
        check(s);
        return grad_(s);
    }

    Args hessian(const Args& s) const
    {
        check(s);
        return hess_ ? hess_(s) : fd_hessian(s);
    }

    /// Central differences of the gradient, symmetrized.
    Args fd_hessian(const Args& s) const
    {
        const std::size_t n = arity_;
        Args h(n * n, 0.0);
        Args sp = s, sm = s;
        for (std::size_t j = 0; j < n; ++j) {
            const double step = 1e-5 * std::fmax(1.0, std::fabs(s[j]));
            sp[j] = s[j] + step;
            sm[j] = s[j] - step;
            const Args gp = grad_(sp), gm = grad_(sm);
            for (std::size_t i = 0; i < n; ++i) h[i * n + j] = (gp[i] - gm[i]) / (2.0 * step);
            sp[j] = sm[j] = s[j];
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) h[i * n + j] = h[j * n + i] = 0.5 * (h[i * n + j] + h[j * n + i]);
        return h;
    }

private:
    OuterFunction(std::string name, std::size_t arity, Args params, ValueFn v, GradFn g, HessFn h)
        : name_(std::move(name)), arity_(arity), params_(std::move(params)), value_(std::move(v)), grad_(std::move(g)), hess_(std::move(h))
    {
    }

    static OuterFunction ridge(std::string name, Args a, double b, std::function<double(double)> h0, std::function<double(double)> h1,
                               std::function<double(double)> h2)
    {
        const std::size_t n = a.size();
        Args params = a;
        params.push_back(b);
        auto arg = [a, b](const Args& s) {
            double u = b;
            for (std::size_t i = 0; i < a.size(); ++i) u += a[i] * s[i];
            return u;
        };
        return OuterFunction(
            std::move(name), n, params, [arg, h0](const Args& s) { return h0(arg(s)); },
            [a, arg, h1](const Args& s) {
                const double d = h1(arg(s));
                Args g(a.size());
                for (std::size_t i = 0; i < a.size(); ++i) g[i] = d * a[i];
                return g;
            },
            [a, n, arg, h2](const Args& s) {
                const double d = h2(arg(s));
                Args h(n * n);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) h[i * n + j] = d * a[i] * a[j];
                return h;
            });
    }

    void check(const Args& s) const
    {
        if (s.size() != arity_) throw UsageError("outer function " + name_ + " expects " + std::to_string(arity_) + " arguments");
    }

    std::string name_;
    std::size_t arity_ = 0;
    Args params_;
    ValueFn value_;
    GradFn grad_;
    HessFn hess_;
};

/// F(gamma) = g(<f_1, gamma>, ..., <f_N, gamma>).
template <std::size_t D>
struct CylinderFunction {
    OuterFunction outer = OuterFunction::constant(0.0);
    std::vector<TestFunction<D>> inner;

    CylinderFunction() = default;
    CylinderFunction(OuterFunction g, std::vector<TestFunction<D>> f) : outer(std::move(g)), inner(std::move(f))
    {
        if (outer.arity() != inner.size()) throw UsageError("outer arity does not match the number of test functions");
    }

    static CylinderFunction constant(double c) { return CylinderFunction(OuterFunction::constant(c), {}); }

    bool supported_in(const TorusBox<D>& box) const
    {
        for (const auto& f : inner)
            if (!f.supported_in(box)) return false;
        return true;
    }
};

/// Linear statistics of a cylinder function's test functions, plus per-particle jets.
template <std::size_t D>
struct CylinderJets {
    std::vector<double> s;
    std::vector<Vec<D>> grad_sum;
    std::vector<double> lap_sum;
    /// jets[i][p] for test function i at particle p.
    std::vector<std::vector<Jet<D>>> jets;
};

template <std::size_t D>
CylinderJets<D> cylinder_jets(const CylinderFunction<D>& F, const Configuration<D>& cfg)
{
    const std::size_t N = F.inner.size();
    CylinderJets<D> J;
    J.s.assign(N, 0.0);
    J.grad_sum.assign(N, zero_vec<D>());
    J.lap_sum.assign(N, 0.0);
    J.jets.assign(N, std::vector<Jet<D>>(cfg.size()));
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t p = 0; p < cfg.size(); ++p) {
            const Jet<D> j = F.inner[i].jet(cfg[p]);
            J.jets[i][p] = j;
            J.s[i] += j.value;
            J.grad_sum[i] += j.gradient;
            J.lap_sum[i] += j.laplacian;
        }
    }
    return J;
}

template <std::size_t D>
double eval(const CylinderFunction<D>& F, const Configuration<D>& cfg)
{
    std::vector<double> s(F.inner.size(), 0.0);
    for (std::size_t i = 0; i < F.inner.size(); ++i) s[i] = linear_statistic(cfg, [&](const Vec<D>& x) { return F.inner[i].value(x); });
    return F.outer.value(s);
}

/// grad^Gamma F(gamma)(x) at every particle x, and grad_gamma F = sum of those entries.
template <std::size_t D>
struct CylinderGradient {
    std::vector<Vec<D>> per_particle;
    Vec<D> aggregate = zero_vec<D>();
};

template <std::size_t D>
CylinderGradient<D> gradients(const CylinderFunction<D>& F, const CylinderJets<D>& J)
{
    const std::size_t n = J.jets.empty() ? 0 : J.jets[0].size();
    CylinderGradient<D> G;
    G.per_particle.assign(n, zero_vec<D>());
    if (F.inner.empty()) return G;
    const auto g = F.outer.gradient(J.s);
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t p = 0; p < n; ++p) G.per_particle[p] += g[i] * J.jets[i][p].gradient;
    for (const auto& v : G.per_particle) G.aggregate += v;
    return G;
}

template <std::size_t D>
CylinderGradient<D> gradients(const CylinderFunction<D>& F, const Configuration<D>& cfg)
{
    CylinderGradient<D> G = gradients(F, cylinder_jets(F, cfg));
    G.per_particle.resize(cfg.size(), zero_vec<D>());
    return G;
}

/// Potential-dependent sums shared by the generators and B_v: the field of the tag at
/// every particle, their total <grad phi, gamma>, and pair sums P_x = sum_{y != x} grad phi(x - y).
template <std::size_t D>
struct EnvironmentForces {
    std::vector<Vec<D>> tag_gradient;
    Vec<D> tag_sum = zero_vec<D>();
    std::vector<Vec<D>> pair_sum;
};

template <std::size_t D>
EnvironmentForces<D> environment_forces(const Configuration<D>& cfg, const PairPotential& pot)
{
    EnvironmentForces<D> E;
    E.tag_gradient.resize(cfg.size());
    for (std::size_t p = 0; p < cfg.size(); ++p) {
        E.tag_gradient[p] = pot.gradient(cfg[p]);
        E.tag_sum += E.tag_gradient[p];
    }
    E.pair_sum = all_forces(cfg, pot, ForceOptions{std::numeric_limits<double>::infinity()});
    for (auto& v : E.pair_sum) v = -v;
    return E;
}

/// <grad phi, gamma>: the drift of the tagged particle.
template <std::size_t D>
Vec<D> tag_drift(const Configuration<D>& cfg, const PairPotential& pot)
{
    return linear_statistic(cfg, [&](const Vec<D>& y) { return pot.gradient(y); });
}

template <std::size_t D>
double generator_env(const CylinderFunction<D>& F, const CylinderJets<D>& J, const EnvironmentForces<D>& E)
{
    const std::size_t N = F.inner.size();
    if (N == 0) return 0.0;
    const std::size_t n = J.jets[0].size();
    const auto g = F.outer.gradient(J.s);
    const auto H = F.outer.hessian(J.s);
    double out = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const double h = H[i * N + j];
            if (h == 0.0) continue;
            double t = dot(J.grad_sum[i], J.grad_sum[j]);
            for (std::size_t p = 0; p < n; ++p) t += dot(J.jets[i][p].gradient, J.jets[j][p].gradient);
            out += h * t;
        }
    }
    for (std::size_t j = 0; j < N; ++j) {
        if (g[j] == 0.0) continue;
        double t = 2.0 * J.lap_sum[j] - dot(E.tag_sum, J.grad_sum[j]);
        for (std::size_t p = 0; p < n; ++p) t -= dot(E.tag_gradient[p] + E.pair_sum[p], J.jets[j][p].gradient);
        out += g[j] * t;
    }
    return out;
}

/// L_env F(gamma) for the environment seen from a tag at the origin.
template <std::size_t D>
double generator_env(const CylinderFunction<D>& F, const Configuration<D>& cfg, const PairPotential& pot)
{
    if (F.inner.empty()) return 0.0;
    return generator_env(F, cylinder_jets(F, cfg), environment_forces(cfg, pot));
}

/// L_coup (f (x) F)(xi, gamma) = f L_env F - 2 (grad_gamma F, grad f) + F (<grad phi, gamma>, grad f) + F lap f.
template <std::size_t D>
double generator_coup(const TestFunction<D>& f, const CylinderFunction<D>& F, const Vec<D>& xi, const Configuration<D>& cfg,
                      const PairPotential& pot)
{
    const auto J = cylinder_jets(F, cfg);
    const auto E = environment_forces(cfg, pot);
    const Jet<D> fx = f.jet(cfg.box().wrap(xi));
    const double Fv = F.outer.value(J.s);
    double Lenv = 0.0;
    Vec<D> gF = zero_vec<D>();
    if (!F.inner.empty()) {
        Lenv = generator_env(F, J, E);
        gF = gradients(F, J).aggregate;
    }
    return fx.value * Lenv - 2.0 * dot(gF, fx.gradient) + Fv * dot(E.tag_sum, fx.gradient) + Fv * fx.laplacian;
}

/// B_v(gamma) = <div v, gamma> - sum_x (grad phi(x), v(x)) - sum_{x,y} (grad phi(x - y), v(x) - v(y)).
template <std::size_t D>
double drift_Bv(const VectorField<D>& v, const Configuration<D>& cfg, const EnvironmentForces<D>& E)
{
    if (v.is_zero()) return 0.0;
    double b = 0.0;
    for (std::size_t p = 0; p < cfg.size(); ++p) b += v.divergence(cfg[p]) - dot(E.tag_gradient[p] + E.pair_sum[p], v.value(cfg[p]));
    return b;
}

template <std::size_t D>
double drift_Bv(const VectorField<D>& v, const Configuration<D>& cfg, const PairPotential& pot)
{
    if (v.is_zero()) return 0.0;
    return drift_Bv(v, cfg, environment_forces(cfg, pot));
}

/// grad_v F = sum_x (v(x), grad^Gamma F(x)).
template <std::size_t D>
double directional_gradient(const CylinderGradient<D>& G, const VectorField<D>& v, const Configuration<D>& cfg)
{
    double s = 0.0;
    for (std::size_t p = 0; p < cfg.size(); ++p) s += dot(v.value(cfg[p]), G.per_particle[p]);
    return s;
}

/// Integrand of the environment Dirichlet form: (grad^Gamma F, grad^Gamma G)_{T Gamma} + (grad_gamma F, grad_gamma G).
template <std::size_t D>
double carre_du_champ(const CylinderGradient<D>& A, const CylinderGradient<D>& B)
{
    double s = dot(A.aggregate, B.aggregate);
    for (std::size_t p = 0; p < A.per_particle.size(); ++p) s += dot(A.per_particle[p], B.per_particle[p]);
    return s;
}

namespace detail {

/// Integral over [a, b] of min(K, cos phi), 0 <= a <= b <= pi/2.
inline double min_cos_integral(double a, double b, double K)
{
    if (b <= a) return 0.0;
    if (K >= 1.0) return std::sin(b) - std::sin(a);
    if (K <= 0.0) return 0.0;
    const double pk = std::acos(K);
    double s = 0.0;
    if (pk > a) s += K * (std::fmin(pk, b) - a);
    if (pk < b) s += std::sin(b) - std::sin(std::fmax(pk, a));
    return s;
}

} // namespace detail

/// Average of min(n, rho |theta|_inf) over the unit sphere in R^d.
inline double sphere_average_min_sup(std::size_t d, double n, double rho, const QuadratureParams& qp = {})
{
    constexpr double quarter = std::numbers::pi / 4.0;
    if (rho <= 0.0) return 0.0;
    switch (d) {
    case 1: return std::fmin(n, rho);
    case 2: return rho * detail::min_cos_integral(0.0, quarter, n / rho) / quarter;
    case 3: {
        // Octant wedge z in [0,1], phi in [0, pi/4]; dz dphi is uniform on the sphere.
        auto inner = [&](double z) {
            const double s = std::sqrt(std::fmax(0.0, 1.0 - z * z));
            const double pz = s > z ? std::acos(z / s) : 0.0;
            const double top = std::fmin(pz, quarter);
            double v = (quarter - top) * std::fmin(n, rho * z);
            if (s > 0.0) v += rho * s * detail::min_cos_integral(0.0, top, n / (rho * s));
            return v;
        };
        QuadratureParams q = qp;
        q.rel_tol = std::fmax(qp.rel_tol, 1e-10);
        // Kinks where rho z = n and where the cube edge meets the cap.
        std::vector<double> cuts{0.0, 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(2.0), 1.0};
        if (n / rho > 0.0 && n / rho < 1.0) cuts.push_back(n / rho);
        std::sort(cuts.begin(), cuts.end());
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < cuts.size(); ++k) acc += integrate(inner, cuts[k], cuts[k + 1], q).value;
        return acc / quarter;
    }
    default: throw UsageError("dimension must be 1, 2 or 3");
    }
}

/// Box scale n with margin delta and the normalization q_n, r_n = sqrt(q_n), where
/// q_n = (1 + int_0^n int_{|x|_inf > r} |grad phi| e^{-phi} dx dr) / n on R^d.
struct AveragingSchedule {
    double n = 1.0;
    double delta = 0.1;
    double q = 1.0;
    double r = 1.0;
    /// The double integral in q_n, with its doubling-rule status.
    double tail_integral = 0.0;
    Convergence status = Convergence::Convergent;

    /// r_n n^d
    double normalizer(std::size_t d) const { return r * std::pow(n, static_cast<double>(d)); }

    void check_fits(double box_half) const
    {
        if (!(delta > 0.0)) throw UsageError("averaging margin delta must be positive");
        if (n + delta > box_half) throw UsageError("averaging box n + delta exceeds the torus half-length");
    }
};

/// Swapping the order of integration, the double integral equals
/// int_{R^d} |grad phi(x)| e^{-phi(x)} min(n, |x|_inf) dx, done radially.
inline AveragingSchedule make_schedule(const RadialProfile& prof, double n, double delta, const QuadratureParams& qp = {})
{
    if (!(n > 0.0)) throw UsageError("averaging scale n must be positive");
    if (!(delta > 0.0)) throw UsageError("averaging margin delta must be positive");
    AveragingSchedule s;
    s.n = n;
    s.delta = delta;
    const std::size_t d = prof.dimension;
    const double area = unit_sphere_area(d);
    auto integrand = [&](double rho) {
        if (rho <= prof.core || rho == 0.0) return 0.0;
        const double u = prof.value(rho);
        if (!std::isfinite(u)) return 0.0;
        const double g = std::fabs(prof.derivative(rho));
        if (g == 0.0) return 0.0;
        const double w = std::exp(std::log(g) - u);
        if (w == 0.0) return 0.0;
        return w * sphere_average_min_sup(d, n, rho, qp) * area * std::pow(rho, static_cast<double>(d) - 1.0);
    };
    const auto I = improper_integral(integrand, 0.0, std::fmax(qp.initial_limit * prof.scale, 2.0 * n * std::sqrt(double(d))),
                                     0.25 * prof.scale, qp);
    s.tail_integral = I.value;
    s.status = I.status;
    s.q = (1.0 + I.value) / n;
    s.r = std::sqrt(s.q);
    return s;
}

inline AveragingSchedule make_schedule(const PairPotential& pot, double n, double delta, const QuadratureParams& qp = {})
{
    return make_schedule(RadialProfile::from(pot), n, delta, qp);
}

/// Schedules for an increasing n-grid; `monotone` checks that r_n and q_n / r_n decrease.
struct ScheduleGrid {
    std::vector<AveragingSchedule> steps;
    bool monotone = true;
};

inline ScheduleGrid make_schedule_grid(const RadialProfile& prof, const std::vector<double>& ns, double delta, const QuadratureParams& qp = {})
{
    ScheduleGrid g;
    for (std::size_t k = 0; k < ns.size(); ++k) {
        if (k > 0 && !(ns[k] > ns[k - 1])) throw UsageError("n-grid must be strictly increasing");
        g.steps.push_back(make_schedule(prof, ns[k], delta, qp));
        if (k > 0) {
            const auto& a = g.steps[k - 1];
            const auto& b = g.steps[k];
            if (!(b.r < a.r) || !(b.q / b.r < a.q / a.r)) g.monotone = false;
        }
    }
    return g;
}

/// c_n^0: indicator of the closed cube [-n, n]^d.
template <std::size_t D>
bool in_cube(const Vec<D>& x, double n)
{
    for (std::size_t k = 0; k < D; ++k)
        if (std::fabs(x[k]) > n) return false;
    return true;
}

/// Y~_i^n(gamma) = <d_i phi> - (<d_i phi c> + <d_i phi> <c> + sum_{x,y} d_i phi(x - y)(c(x) - c(y))) / (r_n n^d + <c>)
/// with c = c_n^0.
template <std::size_t D>
double y_tilde(std::size_t axis, const AveragingSchedule& s, const Configuration<D>& cfg, const EnvironmentForces<D>& E)
{
    if (axis >= D) throw UsageError("axis out of range");
    double b = 0.0, inner = 0.0, pairs = 0.0;
    for (std::size_t p = 0; p < cfg.size(); ++p) {
        if (!in_cube(cfg[p], s.n)) continue;
        b += 1.0;
        inner += E.tag_gradient[p][axis];
        // Pairs with both ends in the cube cancel, so the pair sum is sum_{x in cube} P_x[i].
        pairs += E.pair_sum[p][axis];
    }
    const double t = E.tag_sum[axis];
    return -(inner + t * b + pairs) / (s.normalizer(D) + b) + t;
}

template <std::size_t D>
double y_tilde(std::size_t axis, const AveragingSchedule& s, const Configuration<D>& cfg, const PairPotential& pot)
{
    return y_tilde(axis, s, cfg, environment_forces(cfg, pot));
}

/// F_n^delta = <f_n^delta> / (r_n n^d + <c_n^delta>) as a cylinder function: f_n^delta is the
/// i-th coordinate on [-n, n]^d and c_n^delta is 1 there, both ramped to 0 across the delta shell.
template <std::size_t D>
CylinderFunction<D> averaging_cylinder(std::size_t axis, const AveragingSchedule& s)
{
    Vec<D> half;
    half.fill(s.n);
    const Vec<D> o = zero_vec<D>();
    return CylinderFunction<D>(OuterFunction::ratio(s.normalizer(D)),
                               {TestFunction<D>::smooth_coordinate(axis, o, half, s.delta), TestFunction<D>::bump(1.0, o, half, s.delta)});
}

struct AveragingValue {
    double F = 0.0;
    /// 1 iff no particle lies in the shell [-n-delta, n+delta]^d minus (-n, n)^d.
    int H = 1;
};

template <std::size_t D>
bool in_shell(const Vec<D>& x, double n, double delta)
{
    double m = 0.0;
    for (std::size_t k = 0; k < D; ++k) m = std::fmax(m, std::fabs(x[k]));
    return m >= n && m <= n + delta;
}

template <std::size_t D>
AveragingValue averaging_functional(std::size_t axis, const AveragingSchedule& s, const Configuration<D>& cfg)
{
    if (axis >= D) throw UsageError("axis out of range");
    s.check_fits(cfg.box().half());
    AveragingValue v;
    v.F = eval(averaging_cylinder<D>(axis, s), cfg);
    for (const auto& x : cfg.positions()) {
        if (in_shell(x, s.n, s.delta)) {
            v.H = 0;
            break;
        }
    }
    return v;
}

/// Rate of the residual martingale's quadratic variation at a state with b = <c_n^0, gamma>:
/// 2 (b / (R + b)^2 + (b / (R + b) - 1)^2), R = r_n n^d.
inline double reconstruction_qv_rate(double R, double b)
{
    const double den = R + b;
    const double frac = b / den;
    return 2.0 * (b / (den * den) + (frac - 1.0) * (frac - 1.0));
}

} // namespace tagdiff

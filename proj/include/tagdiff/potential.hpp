#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>

#include "tagdiff/errors.hpp"
#include "tagdiff/vec.hpp"

namespace tagdiff {

enum class PotentialKind { LennardJones, SmoothBump, Zero };

inline std::string_view to_string(PotentialKind k) noexcept
{
    switch (k) {
    case PotentialKind::LennardJones: return "lennard_jones";
    case PotentialKind::SmoothBump: return "smooth_bump";
    case PotentialKind::Zero: return "zero";
    }
    return "?";
}

inline PotentialKind potential_kind_from_string(std::string_view s)
{
    if (s == "lennard_jones" || s == "lj") return PotentialKind::LennardJones;
    if (s == "smooth_bump" || s == "bump") return PotentialKind::SmoothBump;
    if (s == "zero" || s == "none") return PotentialKind::Zero;
    throw UsageError("unknown potential kind '" + std::string(s) + "'");
}

/// Radially symmetric pair interaction phi(x) = u(|x|).
///
/// LennardJones:  u(r) = 4 eps ((s/r)^12 - (s/r)^6), singular at 0.
/// SmoothBump:    u(r) = eps (1 - (r/s)^2)^3 for r < s, else 0. Bounded, C^2.
/// Zero:          u = 0.
///
/// A truncated potential equals u(r) - u(r_c) for r < r_c and 0 beyond, so it is
/// continuous at the cutoff. `cutoff_radius == inf` means untruncated. Immutable.
class PairPotential {
public:
    /// Radii below this multiple of sigma are treated as the singular core.
    static constexpr double core_guard = 1e-12;

    PairPotential() = default;

    static PairPotential lennard_jones(double epsilon, double sigma, std::size_t dimension)
    {
        if (!(epsilon > 0.0) || !(sigma > 0.0)) throw UsageError("Lennard-Jones needs epsilon > 0 and sigma > 0");
        return PairPotential(PotentialKind::LennardJones, epsilon, sigma, dimension);
    }

    static PairPotential smooth_bump(double height, double range, std::size_t dimension)
    {
        if (!(range > 0.0)) throw UsageError("smooth bump needs range > 0");
        return PairPotential(PotentialKind::SmoothBump, height, range, dimension);
    }

    static PairPotential zero(std::size_t dimension) { return PairPotential(PotentialKind::Zero, 0.0, 1.0, dimension); }

    PotentialKind kind() const noexcept { return kind_; }
    double epsilon() const noexcept { return epsilon_; }
    double sigma() const noexcept { return sigma_; }
    double cutoff_radius() const noexcept { return cutoff_; }
    double shift_constant() const noexcept { return shift_; }
    std::size_t dimension() const noexcept { return dim_; }

    bool is_truncated() const noexcept { return std::isfinite(cutoff_); }
    bool is_singular() const noexcept { return kind_ == PotentialKind::LennardJones; }
    bool is_zero() const noexcept { return kind_ == PotentialKind::Zero; }

    /// Distance beyond which the (possibly truncated) potential vanishes identically.
    double interaction_range() const noexcept
    {
        switch (kind_) {
        case PotentialKind::Zero: return 0.0;
        case PotentialKind::SmoothBump: return std::fmin(sigma_, cutoff_);
        case PotentialKind::LennardJones: return cutoff_;
        }
        return cutoff_;
    }

    double core_radius() const noexcept { return is_singular() ? core_guard * sigma_ : 0.0; }

    /// Untruncated radial profile u(r). +inf inside the singular core.
    double base_radial(double r) const noexcept
    {
        switch (kind_) {
        case PotentialKind::Zero: return 0.0;
        case PotentialKind::SmoothBump: {
            if (r >= sigma_) return 0.0;
            const double w = 1.0 - (r / sigma_) * (r / sigma_);
            return epsilon_ * w * w * w;
        }
        case PotentialKind::LennardJones: {
            if (r < core_radius()) return std::numeric_limits<double>::infinity();
            const double s2 = (sigma_ / r) * (sigma_ / r);
            const double s6 = s2 * s2 * s2;
            return 4.0 * epsilon_ * (s6 * s6 - s6);
        }
        }
        return 0.0;
    }

    /// Untruncated radial derivative u'(r). Not defined inside the singular core.
    double base_radial_derivative(double r) const
    {
        switch (kind_) {
        case PotentialKind::Zero: return 0.0;
        case PotentialKind::SmoothBump: {
            if (r >= sigma_) return 0.0;
            const double w = 1.0 - (r / sigma_) * (r / sigma_);
            return -6.0 * epsilon_ * w * w * r / (sigma_ * sigma_);
        }
        case PotentialKind::LennardJones: {
            if (r < core_radius()) throw SingularityError("gradient requested inside the Lennard-Jones core");
            const double s2 = (sigma_ / r) * (sigma_ / r);
            const double s6 = s2 * s2 * s2;
            return 24.0 * epsilon_ * (s6 - 2.0 * s6 * s6) / r;
        }
        }
        return 0.0;
    }

    /// Truncated-and-shifted radial profile.
    double radial(double r) const noexcept
    {
        if (r >= cutoff_) return 0.0;
        return base_radial(r) - shift_;
    }

    double radial_derivative(double r) const
    {
        if (r >= cutoff_) return 0.0;
        return base_radial_derivative(r);
    }

    template <std::size_t D>
    double evaluate(const Vec<D>& x) const
    {
        check_dimension(D);
        return radial(norm(x));
    }

    /// grad phi(x) = u'(|x|) x / |x|. Exactly odd in x.
    template <std::size_t D>
    Vec<D> gradient(const Vec<D>& x) const
    {
        check_dimension(D);
        const double r = norm(x);
        if (r >= cutoff_ || is_zero()) return zero_vec<D>();
        if (r < core_radius() || r == 0.0) {
            if (is_singular()) throw SingularityError("gradient requested at the singularity");
            return zero_vec<D>();
        }
        return gradient_at(x, r);
    }

    /// gradient(x) for r = norm(x) already known to lie in [core_radius, cutoff), r > 0.
    template <std::size_t D>
    Vec<D> gradient_at(const Vec<D>& x, double r) const
    {
        const double scale = base_radial_derivative(r) / r;
        return scale * x;
    }

    /// Potential equal to phi - phi(r_c) inside r_c, zero outside. Always truncates
    /// the untruncated base, so repeating with the same r_c is a no-op.
    PairPotential truncate_and_shift(double r_c) const
    {
        if (!(r_c > 0.0)) throw UsageError("cutoff radius must be positive");
        if (is_singular() && r_c <= core_radius()) throw UsageError("cutoff radius lies inside the singular core");
        PairPotential p = *this;
        if (is_zero()) {
            p.cutoff_ = std::numeric_limits<double>::infinity();
            p.shift_ = 0.0;
            return p;
        }
        p.cutoff_ = r_c;
        p.shift_ = base_radial(r_c);
        return p;
    }

    /// The untruncated interaction this potential was derived from.
    PairPotential untruncated() const
    {
        PairPotential p = *this;
        p.cutoff_ = std::numeric_limits<double>::infinity();
        p.shift_ = 0.0;
        return p;
    }

    friend bool operator==(const PairPotential&, const PairPotential&) = default;

private:
    PairPotential(PotentialKind kind, double eps, double sigma, std::size_t dim)
        : kind_(kind), epsilon_(eps), sigma_(sigma), dim_(dim)
    {
        if (dim < 1 || dim > 3) throw UsageError("dimension must be 1, 2 or 3");
    }

    void check_dimension(std::size_t d) const
    {
        if (d != dim_) {
            throw UsageError("displacement has dimension " + std::to_string(d) + ", potential expects " + std::to_string(dim_));
        }
    }

    PotentialKind kind_ = PotentialKind::Zero;
    double epsilon_ = 0.0;
    double sigma_ = 1.0;
    double cutoff_ = std::numeric_limits<double>::infinity();
    double shift_ = 0.0;
    std::size_t dim_ = 1;
};

} // namespace tagdiff

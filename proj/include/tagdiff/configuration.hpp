#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tagdiff/errors.hpp"
#include "tagdiff/potential.hpp"
#include "tagdiff/vec.hpp"

namespace tagdiff {

/// Periodic box [-L/2, L/2)^D.
template <std::size_t D>
struct TorusBox {
    double side_length = 1.0;

    TorusBox() = default;
    explicit TorusBox(double L) : side_length(L)
    {
        if (!(L > 0.0) || !std::isfinite(L)) throw UsageError("box side length must be positive");
    }

    static constexpr std::size_t dimension() noexcept { return D; }
    double half() const noexcept { return 0.5 * side_length; }
    double volume() const noexcept { return std::pow(side_length, static_cast<double>(D)); }

    double wrap(double v) const noexcept
    {
        const double L = side_length;
        // Differences of wrapped points are at most one period out.
        if (v >= -0.5 * L && v < 0.5 * L) return v;
        if (v >= 0.5 * L && v < 1.5 * L) {
            const double r = v - L;
            if (r >= -0.5 * L && r < 0.5 * L) return r;
        } else if (v < -0.5 * L && v >= -1.5 * L) {
            const double r = v + L;
            if (r >= -0.5 * L && r < 0.5 * L) return r;
        }
        double r = v - L * std::floor((v + 0.5 * L) / L);
        while (r >= 0.5 * L) r -= L;
        while (r < -0.5 * L) r += L;
        return r;
    }

    Vec<D> wrap(const Vec<D>& v) const noexcept
    {
        Vec<D> r;
        for (std::size_t k = 0; k < D; ++k) r[k] = wrap(v[k]);
        return r;
    }

    bool contains(const Vec<D>& v) const noexcept
    {
        for (double c : v) {
            if (!(c >= -half() && c < half())) return false;
        }
        return true;
    }

    /// Throws unless the potential's range fits the minimum-image convention.
    void check_binding(const PairPotential& pot) const
    {
        if (pot.dimension() != D) throw UsageError("potential dimension does not match the box");
        if (pot.interaction_range() > half()) {
            throw UsageError("cutoff radius " + std::to_string(pot.interaction_range()) + " exceeds half the box side " +
                             std::to_string(half()));
        }
    }

    friend bool operator==(const TorusBox&, const TorusBox&) = default;
};

/// Representative of x - y with every coordinate in [-L/2, L/2).
template <std::size_t D>
Vec<D> min_image(const TorusBox<D>& box, const Vec<D>& x, const Vec<D>& y) noexcept
{
    return box.wrap(x - y);
}

/// Limits and counters for the pair-force kernel.
struct ForceOptions {
    double f_max = 1e6;
};

struct ForceDiagnostics {
    std::uint64_t evaluations = 0;
    std::uint64_t cap_events = 0;
    std::uint64_t coincident = 0;

    ForceDiagnostics& operator+=(const ForceDiagnostics& o) noexcept
    {
        evaluations += o.evaluations;
        cap_events += o.cap_events;
        coincident += o.coincident;
        return *this;
    }
};

/// capped_gradient for a non-zero potential with r = norm(dx) < interaction_range.
template <std::size_t D>
Vec<D> capped_gradient_within(const PairPotential& pot, const Vec<D>& dx, double r, const ForceOptions& opt, ForceDiagnostics* diag)
{
    if (diag) ++diag->evaluations;
    if (r == 0.0) {
        if (diag) ++diag->coincident;
        return zero_vec<D>();
    }
    if (r < pot.core_radius()) {
        if (diag) ++diag->cap_events;
        return (-opt.f_max / r) * dx;
    }
    Vec<D> g = pot.gradient_at(dx, r);
    const double gn = norm(g);
    if (gn > opt.f_max) {
        if (diag) ++diag->cap_events;
        g = (opt.f_max / gn) * g;
    }
    return g;
}

/// grad phi(dx) with the singular core and large magnitudes replaced by a force of
/// magnitude f_max along dx. Exactly odd in dx. Exactly coincident points give 0.
template <std::size_t D>
Vec<D> capped_gradient(const PairPotential& pot, const Vec<D>& dx, const ForceOptions& opt, ForceDiagnostics* diag)
{
    if (pot.is_zero()) return zero_vec<D>();
    const double r = norm(dx);
    if (r >= pot.interaction_range()) return zero_vec<D>();
    return capped_gradient_within(pot, dx, r, opt, diag);
}

/// Uniform grid of cells of side >= range, used to enumerate candidate neighbours.
/// Candidates are returned in ascending particle order, so sums over them match a
/// naive ascending loop bit for bit.
template <std::size_t D>
class CellList {
public:
    CellList() = default;

    CellList(const TorusBox<D>& box, double range)
    {
        if (!(range > 0.0) || !std::isfinite(range)) return;
        const auto nc = static_cast<std::size_t>(std::floor(box.side_length / range));
        if (nc < 3) return;
        per_dim_ = nc;
        side_ = box.side_length / static_cast<double>(nc);
        half_ = box.half();
        range_ = range;
        std::size_t total = 1;
        for (std::size_t k = 0; k < D; ++k) total *= nc;
        cells_.assign(total, {});
    }

    bool active() const noexcept { return per_dim_ != 0; }
    double range() const noexcept { return range_; }

    std::size_t cell_of(const Vec<D>& x) const noexcept
    {
        std::size_t idx = 0;
        for (std::size_t k = D; k-- > 0;) {
            auto c = static_cast<std::ptrdiff_t>(std::floor((x[k] + half_) / side_));
            c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(per_dim_) - 1);
            idx = idx * per_dim_ + static_cast<std::size_t>(c);
        }
        return idx;
    }

    void clear()
    {
        for (auto& c : cells_) c.clear();
    }

    void insert(std::uint32_t i, const Vec<D>& x) { cells_[cell_of(x)].push_back(i); }

    void erase(std::uint32_t i, const Vec<D>& x)
    {
        auto& c = cells_[cell_of(x)];
        c.erase(std::find(c.begin(), c.end(), i));
    }

    /// All particles in the 3^D block around x, ascending.
    void candidates(const Vec<D>& x, std::vector<std::uint32_t>& out) const
    {
        out.clear();
        std::array<std::ptrdiff_t, D> base{};
        for (std::size_t k = 0; k < D; ++k) {
            auto c = static_cast<std::ptrdiff_t>(std::floor((x[k] + half_) / side_));
            base[k] = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(per_dim_) - 1);
        }
        std::size_t stencil = 1;
        for (std::size_t k = 0; k < D; ++k) stencil *= 3;
        const auto n = static_cast<std::ptrdiff_t>(per_dim_);
        for (std::size_t s = 0; s < stencil; ++s) {
            std::size_t rem = s;
            std::size_t idx = 0;
            std::array<std::ptrdiff_t, D> c{};
            for (std::size_t k = 0; k < D; ++k) {
                c[k] = ((base[k] + static_cast<std::ptrdiff_t>(rem % 3) - 1) % n + n) % n;
                rem /= 3;
            }
            for (std::size_t k = D; k-- > 0;) idx = idx * per_dim_ + static_cast<std::size_t>(c[k]);
            const auto& cell = cells_[idx];
            out.insert(out.end(), cell.begin(), cell.end());
        }
        std::sort(out.begin(), out.end());
    }

private:
    std::size_t per_dim_ = 0;
    double side_ = 0.0;
    double half_ = 0.0;
    double range_ = 0.0;
    std::vector<std::vector<std::uint32_t>> cells_;
};

/// Finite point configuration on a torus. Positions are always wrapped. An optional
/// cell index (set via index_range) is kept in sync by every mutator.
template <std::size_t D>
class Configuration {
public:
    Configuration() = default;
    explicit Configuration(const TorusBox<D>& box) : box_(box) {}
    Configuration(const TorusBox<D>& box, const std::vector<Vec<D>>& pts) : box_(box)
    {
        positions_.reserve(pts.size());
        for (const auto& p : pts) positions_.push_back(box_.wrap(p));
    }

    const TorusBox<D>& box() const noexcept { return box_; }
    std::size_t size() const noexcept { return positions_.size(); }
    bool empty() const noexcept { return positions_.empty(); }
    const Vec<D>& operator[](std::size_t i) const noexcept { return positions_[i]; }
    const std::vector<Vec<D>>& positions() const noexcept { return positions_; }

    void add(const Vec<D>& x)
    {
        positions_.push_back(box_.wrap(x));
        if (cells_.active()) cells_.insert(static_cast<std::uint32_t>(positions_.size() - 1), positions_.back());
    }

    /// Removes particle i, keeping the relative order of the others.
    void remove(std::size_t i)
    {
        positions_.erase(positions_.begin() + static_cast<std::ptrdiff_t>(i));
        if (cells_.active()) rebuild_index();
    }

    void move_to(std::size_t i, const Vec<D>& x)
    {
        const Vec<D> w = box_.wrap(x);
        if (cells_.active()) {
            cells_.erase(static_cast<std::uint32_t>(i), positions_[i]);
            cells_.insert(static_cast<std::uint32_t>(i), w);
        }
        positions_[i] = w;
    }

    /// Replace all positions at once (already wrapped by the caller or wrapped here).
    void assign(const std::vector<Vec<D>>& pts)
    {
        positions_.resize(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) positions_[i] = box_.wrap(pts[i]);
        if (cells_.active()) rebuild_index();
    }

    /// Enable the cell index for interactions of the given range (0 disables it).
    void index_range(double range)
    {
        cells_ = CellList<D>(box_, range);
        rebuild_index();
    }

    void rebuild_index()
    {
        if (!cells_.active()) return;
        cells_.clear();
        for (std::size_t i = 0; i < positions_.size(); ++i) cells_.insert(static_cast<std::uint32_t>(i), positions_[i]);
    }

    /// True when neighbour queries for this potential may use the cell index.
    bool indexed_for(const PairPotential& pot) const noexcept
    {
        return cells_.active() && pot.interaction_range() <= cells_.range();
    }

    const CellList<D>& cells() const noexcept { return cells_; }

    /// Candidate partners of a point at x: cell block if indexed, else everyone. Ascending.
    void neighbours(const Vec<D>& x, const PairPotential& pot, std::vector<std::uint32_t>& out) const
    {
        if (indexed_for(pot)) {
            cells_.candidates(x, out);
            return;
        }
        out.resize(positions_.size());
        for (std::size_t i = 0; i < positions_.size(); ++i) out[i] = static_cast<std::uint32_t>(i);
    }

    friend bool operator==(const Configuration& a, const Configuration& b)
    {
        return a.box_ == b.box_ && a.positions_ == b.positions_;
    }

private:
    TorusBox<D> box_{};
    std::vector<Vec<D>> positions_;
    CellList<D> cells_{};
};

/// <h, gamma>: sum of h over all particles. h may be scalar- or vector-valued.
template <std::size_t D, class H>
auto linear_statistic(const Configuration<D>& cfg, H&& h)
{
    using R = std::decay_t<decltype(h(std::declval<const Vec<D>&>()))>;
    R acc{};
    for (const auto& x : cfg.positions()) acc += h(x);
    return acc;
}

/// Sum of phi over unordered pairs, minimum image. +inf if a pair sits in the singular core.
template <std::size_t D>
double interaction_energy(const Configuration<D>& cfg, const PairPotential& pot)
{
    cfg.box().check_binding(pot);
    if (pot.is_zero()) return 0.0;
    double e = 0.0;
    std::vector<std::uint32_t> nb;
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        cfg.neighbours(cfg[i], pot, nb);
        for (std::uint32_t j : nb) {
            if (j <= i) continue;
            e += pot.radial(norm(min_image(cfg.box(), cfg[i], cfg[j])));
        }
    }
    return e;
}

/// W(x, gamma): energy of a ghost particle at x against all particles except `skip`.
template <std::size_t D>
double local_energy(const Configuration<D>& cfg, const Vec<D>& x, const PairPotential& pot,
                    std::size_t skip = std::numeric_limits<std::size_t>::max())
{
    cfg.box().check_binding(pot);
    if (pot.is_zero()) return 0.0;
    const Vec<D> xw = cfg.box().wrap(x);
    double e = 0.0;
    std::vector<std::uint32_t> nb;
    cfg.neighbours(xw, pot, nb);
    for (std::uint32_t j : nb) {
        if (j == skip) continue;
        e += pot.radial(norm(min_image(cfg.box(), xw, cfg[j])));
    }
    return e;
}

/// Drift on particle i: -sum_{j != i} grad phi(x_i - x_j).
template <std::size_t D>
Vec<D> pair_force(const Configuration<D>& cfg, std::size_t i, const PairPotential& pot, const ForceOptions& opt = {},
                  ForceDiagnostics* diag = nullptr)
{
    cfg.box().check_binding(pot);
    if (i >= cfg.size()) throw UsageError("particle index out of range");
    Vec<D> f = zero_vec<D>();
    if (pot.is_zero()) return f;
    std::vector<std::uint32_t> nb;
    cfg.neighbours(cfg[i], pot, nb);
    for (std::uint32_t j : nb) {
        if (j == i) continue;
        f -= capped_gradient(pot, min_image(cfg.box(), cfg[i], cfg[j]), opt, diag);
    }
    return f;
}

/// pair_force for every particle, visiting each pair once. Contributions reach every
/// entry in ascending partner order and grad phi is exactly odd, so each entry is bitwise
/// equal to pair_force and independent of the cell index. Diagnostics count pairs.
template <std::size_t D>
std::vector<Vec<D>> all_forces(const Configuration<D>& cfg, const PairPotential& pot, const ForceOptions& opt = {},
                               ForceDiagnostics* diag = nullptr)
{
    cfg.box().check_binding(pot);
    std::vector<Vec<D>> out(cfg.size(), zero_vec<D>());
    if (pot.is_zero()) return out;
    // Small systems: the cell stencil covers most of the box, so a plain triangle loop
    // is faster. Same ascending order, so the sums are identical.
    if (cfg.size() <= 96) {
        // Skips only pairs clearly outside the range, where the kernel returns zero anyway.
        const double skip2 = pot.interaction_range() * pot.interaction_range() * (1.0 + 1e-12);
        const auto& x = cfg.positions();
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (std::size_t j = i + 1; j < x.size(); ++j) {
                const Vec<D> dx = min_image(cfg.box(), x[i], x[j]);
                if (dot(dx, dx) > skip2) continue;
                const Vec<D> g = capped_gradient(pot, dx, opt, diag);
                out[i] -= g;
                out[j] += g;
            }
        }
        return out;
    }
    std::vector<std::uint32_t> nb;
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        cfg.neighbours(cfg[i], pot, nb);
        for (std::uint32_t j : nb) {
            if (j <= i) continue;
            const Vec<D> g = capped_gradient(pot, min_image(cfg.box(), cfg[i], cfg[j]), opt, diag);
            out[i] -= g;
            out[j] += g;
        }
    }
    return out;
}

/// Verlet pair list for repeated force evaluations on a moving configuration. Pairs closer
/// than range + skin are stored in (i, j > i) order and the list is rebuilt once any particle
/// has moved skin / 2, so no interacting pair is ever missing. forces() visits the stored
/// pairs in the same order as the triangle loop of all_forces and returns identical bits.
template <std::size_t D>
class PairList {
public:
    PairList(const TorusBox<D>& box, const PairPotential& pot, double skin_fraction = 0.2)
        : box_(box), range_(pot.interaction_range()), skin_(skin_fraction * pot.interaction_range())
    {
        box.check_binding(pot);
        if (!pot.is_zero() && !(skin_ > 0.0)) throw UsageError("pair list skin must be positive");
    }

    /// x must be wrapped.
    std::vector<Vec<D>> forces(const std::vector<Vec<D>>& x, const PairPotential& pot, const ForceOptions& opt = {},
                               ForceDiagnostics* diag = nullptr)
    {
        std::vector<Vec<D>> out(x.size(), zero_vec<D>());
        if (pot.is_zero()) return out;
        if (stale(x)) rebuild(x);
        for (const auto& [i, j] : pairs_) {
            const Vec<D> dx = min_image(box_, x[i], x[j]);
            const double r = std::sqrt(dot(dx, dx));
            if (r >= range_) continue;
            const Vec<D> g = capped_gradient_within(pot, dx, r, opt, diag);
            out[i] -= g;
            out[j] += g;
        }
        return out;
    }

    std::size_t rebuilds() const noexcept { return rebuilds_; }
    std::size_t size() const noexcept { return pairs_.size(); }

private:
    bool stale(const std::vector<Vec<D>>& x) const
    {
        if (x.size() != ref_.size()) return true;
        const double lim2 = 0.25 * skin_ * skin_;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const Vec<D> d = min_image(box_, x[i], ref_[i]);
            if (dot(d, d) >= lim2) return true;
        }
        return false;
    }

    void rebuild(const std::vector<Vec<D>>& x)
    {
        ref_ = x;
        pairs_.clear();
        const double keep2 = (range_ + skin_) * (range_ + skin_);
        for (std::uint32_t i = 0; i < x.size(); ++i)
            for (std::uint32_t j = i + 1; j < x.size(); ++j) {
                const Vec<D> dx = min_image(box_, x[i], x[j]);
                if (dot(dx, dx) < keep2) pairs_.emplace_back(i, j);
            }
        ++rebuilds_;
    }

    TorusBox<D> box_;
    double range_;
    double skin_;
    std::vector<Vec<D>> ref_;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_;
    std::size_t rebuilds_ = 0;
};

/// Configuration seen from xi: every position replaced by wrap(x - xi).
template <std::size_t D>
Configuration<D> recenter(const Configuration<D>& cfg, const Vec<D>& xi)
{
    Configuration<D> out(cfg.box());
    for (const auto& x : cfg.positions()) out.add(min_image(cfg.box(), x, xi));
    return out;
}

} // namespace tagdiff

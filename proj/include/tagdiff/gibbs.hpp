#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "tagdiff/configuration.hpp"
#include "tagdiff/errors.hpp"
#include "tagdiff/potential.hpp"
#include "tagdiff/rng.hpp"

namespace tagdiff {

/// Grand-canonical Metropolis parameters. move_mix is (birth, death, displacement).
struct GcmcParams {
    double activity = 0.0;
    std::array<double, 3> move_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double displacement_scale = 0.5;
    std::size_t sweeps = 0;
    std::uint64_t seed = 0;
    /// One-body field phi(x) exerted by a tagged particle frozen at the origin.
    bool external_field = true;
    /// Pair interaction between environment particles; off leaves only the field.
    bool pair_interaction = true;
    /// Moves per sweep; 0 means max(10, ceil(z |Lambda|)). Never depends on the current
    /// state, otherwise sampling at sweep boundaries would bias the chain.
    std::size_t moves_per_sweep = 0;

    std::size_t sweep_length(double volume) const
    {
        if (moves_per_sweep > 0) return moves_per_sweep;
        const auto m = static_cast<std::size_t>(std::ceil(activity * volume));
        return m < 10 ? 10 : m;
    }

    void validate() const
    {
        if (!(activity >= 0.0) || !std::isfinite(activity)) throw UsageError("activity must be finite and >= 0");
        double s = 0.0;
        for (double p : move_mix) {
            if (!(p >= 0.0)) throw UsageError("move probabilities must be nonnegative");
            s += p;
        }
        if (std::fabs(s - 1.0) > 1e-12) throw UsageError("move probabilities must sum to 1");
        if ((move_mix[0] > 0.0) != (move_mix[1] > 0.0)) throw UsageError("birth and death moves must be enabled together");
        if (!(displacement_scale > 0.0)) throw UsageError("displacement scale must be positive");
    }
};

enum class MoveKind { Birth, Death, Displacement };

struct MoveRecord {
    MoveKind kind = MoveKind::Birth;
    bool accepted = false;
    double acceptance = 0.0;
};

struct GcmcStats {
    std::array<std::uint64_t, 3> proposed{};
    std::array<std::uint64_t, 3> accepted{};

    void record(const MoveRecord& m)
    {
        const auto k = static_cast<std::size_t>(m.kind);
        ++proposed[k];
        if (m.accepted) ++accepted[k];
    }
};

/// min(1, ratio * z |Lambda| e^{-dU} / (n + 1)); dU = external field + W(x, gamma).
/// `ratio` is p_death / p_birth (1 for the default mix).
inline double birth_acceptance(double z, double volume, std::size_t n, double dU, double ratio = 1.0)
{
    if (z == 0.0 || std::isinf(dU)) return 0.0;
    const double a = ratio * z * volume * std::exp(-dU) / static_cast<double>(n + 1);
    return a < 1.0 ? a : 1.0;
}

/// min(1, ratio * n e^{dU} / (z |Lambda|)); dU = external field + W(x, gamma \ x), n = current size.
inline double death_acceptance(double z, double volume, std::size_t n, double dU, double ratio = 1.0)
{
    if (n == 0) return 0.0;
    if (z == 0.0 || dU == std::numeric_limits<double>::infinity()) return 1.0;
    const double a = ratio * static_cast<double>(n) * std::exp(dU) / (z * volume);
    return a < 1.0 ? a : 1.0;
}

/// min(1, e^{-(U_new - U_old)}); infinite new energy is always rejected.
inline double displacement_acceptance(double u_old, double u_new)
{
    if (std::isinf(u_new)) return 0.0;
    if (std::isinf(u_old)) return 1.0;
    const double a = std::exp(u_old - u_new);
    return a < 1.0 ? a : 1.0;
}

/// Continuous torus model: positions in the box, pair interaction plus optional field.
template <std::size_t D>
class TorusModel {
public:
    using Point = Vec<D>;

    TorusModel(Configuration<D>& cfg, const PairPotential& pot, bool field, bool pair = true)
        : cfg_(cfg), pot_(pot), field_(field), pair_(pair)
    {
        cfg.box().check_binding(pot);
        if (!pot.is_zero() && !cfg.indexed_for(pot)) cfg.index_range(pot.interaction_range());
    }

    std::size_t size() const { return cfg_.size(); }
    double volume() const { return cfg_.box().volume(); }

    double field(const Point& x) const { return field_ ? pot_.radial(norm(cfg_.box().wrap(x))) : 0.0; }

    Point random_point(RandomStream& rng) const
    {
        const double h = cfg_.box().half();
        Point x;
        for (auto& c : x) c = rng.uniform(-h, h);
        return cfg_.box().wrap(x);
    }

    double pair_energy(const Point& x, std::size_t skip = std::numeric_limits<std::size_t>::max()) const
    {
        return pair_ ? local_energy(cfg_, x, pot_, skip) : 0.0;
    }

    double insertion_energy(const Point& x) const { return field(x) + pair_energy(x); }
    double removal_energy(std::size_t i) const { return field(cfg_[i]) + pair_energy(cfg_[i], i); }

    bool propose_displacement(std::size_t i, double scale, RandomStream& rng, Point& out) const
    {
        Point y = cfg_[i];
        for (auto& c : y) c += scale * rng.normal();
        out = cfg_.box().wrap(y);
        return true;
    }

    double energy_at(std::size_t i, const Point& x) const { return field(x) + pair_energy(x, i); }

    void insert(const Point& x) { cfg_.add(x); }
    void erase(std::size_t i) { cfg_.remove(i); }
    void move(std::size_t i, const Point& x) { cfg_.move_to(i, x); }

private:
    Configuration<D>& cfg_;
    const PairPotential& pot_;
    bool field_;
    bool pair_;
};

/// K-site lattice gas with occupancy <= 1: site fields h_k and nearest-pair coupling J
/// between every pair of occupied sites. Plays the role of the box in toy checks.
class SiteModel {
public:
    using Point = std::size_t;

    SiteModel(std::vector<double> fields, double coupling) : h_(std::move(fields)), J_(coupling) {}

    std::size_t size() const { return occupied_.size(); }
    double volume() const { return static_cast<double>(h_.size()); }
    const std::vector<std::size_t>& occupied() const { return occupied_; }

    Point random_point(RandomStream& rng) const { return rng.index(h_.size()); }

    bool is_occupied(std::size_t k) const
    {
        for (auto s : occupied_)
            if (s == k) return true;
        return false;
    }

    double insertion_energy(Point k) const
    {
        if (is_occupied(k)) return std::numeric_limits<double>::infinity();
        return h_[k] + J_ * static_cast<double>(occupied_.size());
    }

    double removal_energy(std::size_t i) const { return h_[occupied_[i]] + J_ * static_cast<double>(occupied_.size() - 1); }

    bool propose_displacement(std::size_t, double, RandomStream& rng, Point& out) const
    {
        out = rng.index(h_.size());
        return true;
    }

    double energy_at(std::size_t i, Point k) const
    {
        if (k != occupied_[i] && is_occupied(k)) return std::numeric_limits<double>::infinity();
        return h_[k] + J_ * static_cast<double>(occupied_.size() - 1);
    }

    void insert(Point k) { occupied_.push_back(k); }
    void erase(std::size_t i) { occupied_.erase(occupied_.begin() + static_cast<std::ptrdiff_t>(i)); }
    void move(std::size_t i, Point k) { occupied_[i] = k; }

    /// State label: bitmask of occupied sites.
    std::size_t state() const
    {
        std::size_t m = 0;
        for (auto s : occupied_) m |= std::size_t{1} << s;
        return m;
    }

private:
    std::vector<double> h_;
    double J_;
    std::vector<std::size_t> occupied_;
};

/// One Metropolis move on any model exposing the TorusModel interface. Random draws:
/// move kind, proposal, then one uniform for acceptance.
template <class Model>
MoveRecord metropolis_move(Model& m, const GcmcParams& p, RandomStream& rng)
{
    const double u = rng.uniform();
    MoveRecord rec;
    const double pb = p.move_mix[0], pd = p.move_mix[1];
    if (u < pb) {
        rec.kind = MoveKind::Birth;
        const auto x = m.random_point(rng);
        rec.acceptance = birth_acceptance(p.activity, m.volume(), m.size(), m.insertion_energy(x), pd / pb);
        rec.accepted = rng.uniform() < rec.acceptance;
        if (rec.accepted) m.insert(x);
    } else if (u < pb + pd) {
        rec.kind = MoveKind::Death;
        if (m.size() == 0) {
            rng.uniform();
            return rec;
        }
        const std::size_t i = rng.index(m.size());
        rec.acceptance = death_acceptance(p.activity, m.volume(), m.size(), m.removal_energy(i), pb / pd);
        rec.accepted = rng.uniform() < rec.acceptance;
        if (rec.accepted) m.erase(i);
    } else {
        rec.kind = MoveKind::Displacement;
        if (m.size() == 0) {
            rng.uniform();
            return rec;
        }
        const std::size_t i = rng.index(m.size());
        typename Model::Point y{};
        m.propose_displacement(i, p.displacement_scale, rng, y);
        rec.acceptance = displacement_acceptance(m.removal_energy(i), m.energy_at(i, y));
        rec.accepted = rng.uniform() < rec.acceptance;
        if (rec.accepted) m.move(i, y);
    }
    return rec;
}

/// One grand-canonical move on a torus configuration targeting
/// z^n/n! exp(-sum phi(x) - Phi(gamma)).
template <std::size_t D>
MoveRecord gcmc_step(Configuration<D>& cfg, const GcmcParams& p, const PairPotential& pot, RandomStream& rng)
{
    TorusModel<D> m(cfg, pot, p.external_field, p.pair_interaction);
    return metropolis_move(m, p, rng);
}

template <std::size_t D>
void run_sweeps(Configuration<D>& cfg, const GcmcParams& p, const PairPotential& pot, std::size_t sweeps, RandomStream& rng,
                GcmcStats* stats = nullptr)
{
    p.validate();
    TorusModel<D> m(cfg, pot, p.external_field, p.pair_interaction);
    const std::size_t moves = p.sweep_length(cfg.box().volume());
    for (std::size_t s = 0; s < sweeps; ++s) {
        for (std::size_t k = 0; k < moves; ++k) {
            const auto rec = metropolis_move(m, p, rng);
            if (stats) stats->record(rec);
        }
    }
}

/// Burn in from `start` (empty by default) and return the final configuration.
template <std::size_t D>
Configuration<D> sample_equilibrium(const GcmcParams& p, const PairPotential& pot, const TorusBox<D>& box, std::size_t burn_in_sweeps,
                                    RandomStream& rng, const Configuration<D>* start = nullptr)
{
    Configuration<D> cfg = start ? *start : Configuration<D>(box);
    run_sweeps(cfg, p, pot, burn_in_sweeps, rng);
    return cfg;
}

/// Burn in, then record `count` configurations separated by `thin` sweeps.
template <std::size_t D>
std::vector<Configuration<D>> sample_chain(const GcmcParams& p, const PairPotential& pot, const TorusBox<D>& box, std::size_t burn_in,
                                           std::size_t count, std::size_t thin, RandomStream& rng, const Configuration<D>* start = nullptr,
                                           GcmcStats* stats = nullptr)
{
    Configuration<D> cfg = start ? *start : Configuration<D>(box);
    run_sweeps(cfg, p, pot, burn_in, rng, stats);
    std::vector<Configuration<D>> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        run_sweeps(cfg, p, pot, thin, rng, stats);
        out.push_back(Configuration<D>(box, cfg.positions()));
    }
    return out;
}

/// log of z^n/n! exp(-sum_x phi(x) - Phi(gamma)); -inf for forbidden states.
template <std::size_t D>
double log_gibbs_weight(const Configuration<D>& cfg, const GcmcParams& p, const PairPotential& pot)
{
    const double n = static_cast<double>(cfg.size());
    double u = p.pair_interaction ? interaction_energy(cfg, pot) : 0.0;
    if (p.external_field) {
        for (const auto& x : cfg.positions()) u += pot.radial(norm(x));
    }
    if (std::isinf(u)) return -std::numeric_limits<double>::infinity();
    const double lz = n > 0 ? n * std::log(p.activity) : 0.0;
    return lz - u;
}

} // namespace tagdiff

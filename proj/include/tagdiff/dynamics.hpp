#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tagdiff/configuration.hpp"
#include "tagdiff/errors.hpp"
#include "tagdiff/parallel.hpp"
#include "tagdiff/potential.hpp"
#include "tagdiff/rng.hpp"

namespace tagdiff {

enum class Scheme { EulerMaruyama, SubstepAdaptive };

/// Absolute: integrate tag and environment in box coordinates, read the environment off
/// by recentering. Relative: integrate the environment equations directly.
enum class Engine { Absolute, Relative };

struct IntegratorParams {
    double dt = 1e-4;
    Scheme scheme = Scheme::EulerMaruyama;
    Engine engine = Engine::Absolute;
    double f_max = 1e6;
    /// Steps between rows of the X / compensator series.
    std::size_t series_stride = 1;
    /// Steps between stored environment snapshots (only if keep_snapshots).
    std::size_t record_stride = 100;
    bool keep_snapshots = false;
    std::uint64_t seed = 0;
    /// SubstepAdaptive halves a step while max|force| dt exceeds this fraction of sigma.
    double substep_fraction = 0.05;
    int max_halvings = 8;
    /// Round increments to a dyadic grid so frame changes are exact (see Quantizer).
    bool quantize = true;
    /// false zeroes the Brownian increments (no draws are made).
    bool noise = true;

    void validate() const
    {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw UsageError("dt must be positive");
        if (series_stride < 1 || record_stride < 1) throw UsageError("strides must be >= 1");
        if (!(f_max > 0.0)) throw UsageError("force cap must be positive");
        if (max_halvings < 0 || max_halvings > 8) throw UsageError("max_halvings must be in [0, 8]");
        if (!(substep_fraction > 0.0)) throw UsageError("substep fraction must be positive");
    }
};

/// Rounds to multiples of h = 2^(e - 50) where 2^e >= L. When L is itself a multiple of h
/// (any L with at most 50 significant bits, e.g. 10), sums, differences and wraps of
/// quantized coordinates are exact, which makes the absolute and relative engines agree
/// bit for bit. Otherwise quantization is disabled (h = 0).
struct Quantizer {
    double h = 0.0;

    static Quantizer for_box(double L, bool enabled)
    {
        Quantizer q;
        if (!enabled) return q;
        int e = 0;
        std::frexp(L, &e);
        const double h = std::ldexp(1.0, e - 50);
        if (std::fmod(L, h) == 0.0) q.h = h;
        return q;
    }

    double operator()(double v) const { return h > 0.0 ? std::nearbyint(v / h) * h : v; }

    template <std::size_t D>
    Vec<D> operator()(const Vec<D>& v) const
    {
        Vec<D> r;
        for (std::size_t k = 0; k < D; ++k) r[k] = (*this)(v[k]);
        return r;
    }
};

/// Tagged position xi (wrapped), unwrapped displacement X, environment in coordinates
/// relative to the tag.
template <std::size_t D>
struct CoupledState {
    Vec<D> xi = zero_vec<D>();
    Vec<D> X = zero_vec<D>();
    Configuration<D> env;

    CoupledState() = default;
    explicit CoupledState(Configuration<D> e) : env(std::move(e)) {}
};

struct StepDiagnostics {
    ForceDiagnostics force;
    std::uint64_t steps = 0;
    std::uint64_t substeps = 0;

    StepDiagnostics& operator+=(const StepDiagnostics& o)
    {
        force += o.force;
        steps += o.steps;
        substeps += o.substeps;
        return *this;
    }
};

namespace detail {

/// Shared Euler-Maruyama / adaptive kernel over an ordered particle list.
/// `apply(F, W, dt)` receives drifts and Brownian increments and moves the particles.
template <std::size_t D>
class Kernel {
public:
    Kernel(const TorusBox<D>& box, const PairPotential& pot, const IntegratorParams& p)
        : box_(box), pot_(pot), p_(p), q_(Quantizer::for_box(box.side_length, p.quantize)), pairs_(box, pot)
    {
        p.validate();
    }

    const Quantizer& quantizer() const { return q_; }
    const TorusBox<D>& box() const { return box_; }

    /// Draws n x D standard normals (particle-major) and returns W = sqrt(dt) Z.
    void draw(std::size_t n, RandomStream& rng, std::vector<Vec<D>>& W) const
    {
        W.resize(n);
        if (!p_.noise) {
            for (auto& w : W) w = zero_vec<D>();
            return;
        }
        const double s = std::sqrt(p_.dt);
        for (auto& w : W)
            for (auto& c : w) c = s * rng.normal();
    }

    template <class Apply>
    void advance(std::vector<Vec<D>>& pos, const std::vector<Vec<D>>& W, double dt, int level, RandomStream& rng, StepDiagnostics& diag,
                 Apply&& apply)
    {
        work_.resize(pos.size());
        for (std::size_t i = 0; i < pos.size(); ++i) work_[i] = box_.wrap(pos[i]);
        const auto F = pairs_.forces(work_, pot_, ForceOptions{p_.f_max}, &diag.force);
        if (p_.scheme == Scheme::SubstepAdaptive && level < p_.max_halvings) {
            double fm = 0.0;
            for (const auto& f : F) fm = std::fmax(fm, norm(f));
            if (fm * dt > p_.substep_fraction * pot_.sigma()) {
                // Brownian bridge: W1 = W/2 + sqrt(dt)/2 eta, W2 = W - W1.
                std::vector<Vec<D>> W1(W.size()), W2(W.size());
                const double s = 0.5 * std::sqrt(dt);
                for (std::size_t i = 0; i < W.size(); ++i) {
                    for (std::size_t k = 0; k < D; ++k) {
                        W1[i][k] = 0.5 * W[i][k] + (p_.noise ? s * rng.normal() : 0.0);
                        W2[i][k] = W[i][k] - W1[i][k];
                    }
                }
                advance(pos, W1, 0.5 * dt, level + 1, rng, diag, apply);
                advance(pos, W2, 0.5 * dt, level + 1, rng, diag, apply);
                return;
            }
        }
        ++diag.substeps;
        apply(F, W, dt);
    }

    /// q(dt F + sqrt(2) W)
    Vec<D> increment(const Vec<D>& F, const Vec<D>& W, double dt) const
    {
        Vec<D> a;
        for (std::size_t k = 0; k < D; ++k) a[k] = q_(dt * F[k] + std::sqrt(2.0) * W[k]);
        return a;
    }

private:
    TorusBox<D> box_;
    const PairPotential& pot_;
    IntegratorParams p_;
    Quantizer q_;
    PairList<D> pairs_;
    std::vector<Vec<D>> work_;
};

} // namespace detail

/// One step of the full gradient dynamics for every particle of cfg:
/// x_i <- wrap(x_i + dt F_i + sqrt(2 dt) Z_i). Noise is drawn particle by particle.
template <std::size_t D>
void step_full(Configuration<D>& cfg, const IntegratorParams& p, const PairPotential& pot, RandomStream& rng, StepDiagnostics* diag = nullptr)
{
    detail::Kernel<D> k(cfg.box(), pot, p);
    StepDiagnostics local;
    std::vector<Vec<D>> pos(cfg.positions().begin(), cfg.positions().end());
    for (auto& x : pos) x = k.quantizer()(x);
    std::vector<Vec<D>> W;
    k.draw(pos.size(), rng, W);
    k.advance(pos, W, p.dt, 0, rng, local, [&](const std::vector<Vec<D>>& F, const std::vector<Vec<D>>& Wi, double h) {
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = cfg.box().wrap(pos[i] + k.increment(F[i], Wi[i], h));
    });
    cfg.assign(pos);
    ++local.steps;
    if (diag) *diag += local;
}

/// Integrates one coupled state. Index 0 of the internal particle list is the tag.
template <std::size_t D>
class CoupledIntegrator {
public:
    CoupledIntegrator(const TorusBox<D>& box, const PairPotential& pot, const IntegratorParams& p) : k_(box, pot, p), p_(p) {}

    void load(const CoupledState<D>& s)
    {
        const auto& q = k_.quantizer();
        const auto& box = k_.box();
        X_ = s.X;
        C_ = zero_vec<D>();
        pos_.resize(s.env.size() + 1);
        const Vec<D> xi = q(box.wrap(s.xi));
        pos_[0] = p_.engine == Engine::Absolute ? xi : zero_vec<D>();
        xi_ = xi;
        for (std::size_t i = 0; i < s.env.size(); ++i) {
            const Vec<D> y = box.wrap(q(s.env[i]));
            pos_[i + 1] = p_.engine == Engine::Absolute ? box.wrap(xi + y) : y;
        }
    }

    /// One dt. Noise order: tag first, then environment particles, D coordinates each.
    void step(RandomStream& rng)
    {
        k_.draw(pos_.size(), rng, W_);
        noise_.assign(pos_.size(), zero_vec<D>());
        const auto& box = k_.box();
        k_.advance(pos_, W_, p_.dt, 0, rng, diag_, [&](const std::vector<Vec<D>>& F, const std::vector<Vec<D>>& W, double h) {
            for (std::size_t i = 0; i < W.size(); ++i) noise_[i] += std::sqrt(2.0) * W[i];
            const Vec<D> a0 = k_.increment(F[0], W[0], h);
            for (std::size_t k = 0; k < D; ++k) C_[k] += h * F[0][k];
            X_ += a0;
            xi_ = box.wrap(xi_ + a0);
            if (p_.engine == Engine::Absolute) {
                for (std::size_t i = 0; i < pos_.size(); ++i) pos_[i] = box.wrap(pos_[i] + k_.increment(F[i], W[i], h));
            } else {
                for (std::size_t i = 1; i < pos_.size(); ++i) pos_[i] = box.wrap(pos_[i] + (k_.increment(F[i], W[i], h) - a0));
            }
        });
        ++diag_.steps;
    }

    const Vec<D>& X() const { return X_; }
    /// Left-point integral of <grad phi, gamma_s> ds since load().
    const Vec<D>& compensator() const { return C_; }
    const Vec<D>& xi() const { return xi_; }
    std::size_t env_size() const { return pos_.size() - 1; }
    const StepDiagnostics& diagnostics() const { return diag_; }
    /// sqrt(2) dB of the last step in absolute coordinates, tag first.
    const std::vector<Vec<D>>& last_noise() const { return noise_; }

    /// Environment positions relative to the tag.
    void env_positions(std::vector<Vec<D>>& out) const
    {
        out.resize(pos_.size() - 1);
        for (std::size_t i = 1; i < pos_.size(); ++i)
            out[i - 1] = p_.engine == Engine::Absolute ? min_image(k_.box(), pos_[i], pos_[0]) : pos_[i];
    }

    CoupledState<D> state() const
    {
        std::vector<Vec<D>> e;
        env_positions(e);
        CoupledState<D> s{Configuration<D>(k_.box(), e)};
        s.xi = xi_;
        s.X = X_;
        return s;
    }

private:
    detail::Kernel<D> k_;
    IntegratorParams p_;
    std::vector<Vec<D>> pos_;
    std::vector<Vec<D>> W_;
    std::vector<Vec<D>> noise_;
    Vec<D> X_ = zero_vec<D>();
    Vec<D> C_ = zero_vec<D>();
    Vec<D> xi_ = zero_vec<D>();
    StepDiagnostics diag_;
};

/// One coupled step in the environment frame: the tag moves by +<grad phi, gamma> dt +
/// sqrt(2) dB0, each y_i by its pair drift minus the tag drift plus sqrt(2)(dB_i - dB0).
template <std::size_t D>
void step_coupled(CoupledState<D>& s, const IntegratorParams& p, const PairPotential& pot, RandomStream& rng, StepDiagnostics* diag = nullptr)
{
    IntegratorParams rel = p;
    rel.engine = Engine::Relative;
    CoupledIntegrator<D> it(s.env.box(), pot, rel);
    it.load(s);
    it.step(rng);
    s = it.state();
    if (diag) *diag += it.diagnostics();
}

template <std::size_t D>
struct Trajectory {
    std::uint64_t seed = 0;
    double dt = 0.0;
    std::vector<double> times;
    std::vector<Vec<D>> displacement;
    /// Left-point integral of <grad phi, gamma_s> ds, accumulated every step.
    std::vector<Vec<D>> compensator;
    std::vector<std::size_t> particle_count;
    std::vector<double> snapshot_times;
    std::vector<Configuration<D>> snapshots;
    StepDiagnostics diagnostics;
    CoupledState<D> final_state;

    double cap_rate() const
    {
        const auto ev = diagnostics.force.evaluations;
        return ev == 0 ? 0.0 : static_cast<double>(diagnostics.force.cap_events) / static_cast<double>(ev);
    }
    /// Runs whose cap rate exceeds 1e-4 are flagged as biased.
    bool biased() const { return cap_rate() > 1e-4; }
};

/// What an observer sees after every integrator step.
template <std::size_t D>
struct StepView {
    std::size_t step = 0;
    double t_before = 0.0;
    double dt = 0.0;
    const std::vector<Vec<D>>& env_before;
    const std::vector<Vec<D>>& env_after;
    Vec<D> dX;
    Vec<D> dC;
    /// sqrt(2) dB per particle in absolute coordinates, tag first.
    const std::vector<Vec<D>>& noise;
};

template <std::size_t D>
using StepObserver = std::function<void(const StepView<D>&)>;

inline std::size_t step_count(double T, double dt)
{
    if (!(T >= 0.0)) throw UsageError("horizon T must be >= 0");
    const double n = std::round(T / dt);
    if (std::fabs(n * dt - T) > 1e-9 * std::fmax(1.0, T)) throw UsageError("T must be a whole number of steps");
    return static_cast<std::size_t>(n);
}

/// Integrate one trajectory over [0, T] with the given seed.
template <std::size_t D>
Trajectory<D> simulate_trajectory(const CoupledState<D>& initial, double T, const IntegratorParams& p, const PairPotential& pot,
                                  std::uint64_t seed, const StepObserver<D>& observer = {})
{
    const std::size_t nsteps = step_count(T, p.dt);
    CoupledIntegrator<D> it(initial.env.box(), pot, p);
    it.load(initial);
    RandomStream rng(seed);
    Trajectory<D> tr;
    tr.seed = seed;
    tr.dt = p.dt;
    const std::size_t rows = nsteps / p.series_stride + 2;
    tr.times.reserve(rows);
    tr.displacement.reserve(rows);
    tr.compensator.reserve(rows);
    tr.particle_count.reserve(rows);
    auto record = [&](std::size_t k) {
        tr.times.push_back(static_cast<double>(k) * p.dt);
        tr.displacement.push_back(it.X());
        tr.compensator.push_back(it.compensator());
        tr.particle_count.push_back(it.env_size());
    };
    auto snapshot = [&](std::size_t k) {
        if (!p.keep_snapshots) return;
        tr.snapshot_times.push_back(static_cast<double>(k) * p.dt);
        tr.snapshots.push_back(it.state().env);
    };
    record(0);
    snapshot(0);
    std::vector<Vec<D>> before, after;
    if (observer) it.env_positions(before);
    for (std::size_t k = 1; k <= nsteps; ++k) {
        const Vec<D> X0 = it.X(), C0 = it.compensator();
        it.step(rng);
        if (observer) {
            it.env_positions(after);
            observer(StepView<D>{k - 1, static_cast<double>(k - 1) * p.dt, p.dt, before, after, it.X() - X0, it.compensator() - C0,
                                 it.last_noise()});
            std::swap(before, after);
        }
        if (k % p.series_stride == 0 || k == nsteps) record(k);
        if (k % p.record_stride == 0) snapshot(k);
    }
    tr.diagnostics = it.diagnostics();
    tr.final_state = it.state();
    return tr;
}

/// Independent trajectories; member i uses seed derive_seed(seed_base, ids[i]) (ids default
/// to 0..n-1), so results do not depend on ensemble order or worker count.
template <std::size_t D>
std::vector<Trajectory<D>> simulate_ensemble(const std::vector<CoupledState<D>>& initial, double T, const IntegratorParams& p,
                                             const PairPotential& pot, std::uint64_t seed_base, std::size_t workers = 1,
                                             const std::vector<std::uint64_t>& ids = {})
{
    if (!ids.empty() && ids.size() != initial.size()) throw UsageError("ids must match the ensemble size");
    std::vector<Trajectory<D>> out(initial.size());
    parallel_for(initial.size(), workers, [&](std::size_t i) {
        const std::uint64_t id = ids.empty() ? i : ids[i];
        out[i] = simulate_trajectory(initial[i], T, p, pot, derive_seed(seed_base, id));
    });
    return out;
}

} // namespace tagdiff

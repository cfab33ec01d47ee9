#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "tagdiff/potential.hpp"

using namespace tagdiff;

namespace {

template <std::size_t D>
Vec<D> central_difference(const PairPotential& p, const Vec<D>& x, double h)
{
    Vec<D> g{};
    for (std::size_t k = 0; k < D; ++k) {
        Vec<D> a = x, b = x;
        a[k] += h;
        b[k] -= h;
        g[k] = (p.evaluate(a) - p.evaluate(b)) / (2.0 * h);
    }
    return g;
}

} // namespace

TEST(Potential, LennardJonesReferenceValues)
{
    const auto lj = PairPotential::lennard_jones(1.0, 1.0, 2);
    EXPECT_EQ(lj.evaluate(Vec<2>{1.0, 0.0}), 0.0);
    EXPECT_TRUE(std::isinf(lj.evaluate(Vec<2>{0.0, 0.0})));
    EXPECT_GT(lj.evaluate(Vec<2>{0.0, 0.0}), 0.0);
    const double rmin = std::pow(2.0, 1.0 / 6.0);
    EXPECT_NEAR(lj.evaluate(Vec<2>{0.0, rmin}), -1.0, 1e-14);
}

TEST(Potential, GradientAtMinimumVanishes)
{
    const auto lj = PairPotential::lennard_jones(1.0, 1.0, 3).truncate_and_shift(2.5);
    const double rmin = std::pow(2.0, 1.0 / 6.0);
    const auto g = lj.gradient(Vec<3>{rmin, 0.0, 0.0});
    EXPECT_LT(norm(g), 1e-12);
}

TEST(Potential, GradientAtOriginIsSingular)
{
    const auto lj = PairPotential::lennard_jones(1.0, 1.0, 2);
    EXPECT_THROW(lj.gradient(Vec<2>{0.0, 0.0}), SingularityError);
    EXPECT_THROW(lj.gradient(Vec<2>{1e-13, 0.0}), SingularityError);
    const auto bump = PairPotential::smooth_bump(2.0, 1.0, 2);
    EXPECT_EQ(bump.gradient(Vec<2>{0.0, 0.0}), (Vec<2>{0.0, 0.0}));
}

TEST(Potential, FiniteDifferenceAtOnePointFive)
{
    const auto lj = PairPotential::lennard_jones(1.0, 1.0, 2);
    const Vec<2> x{1.5 / std::sqrt(2.0), 1.5 / std::sqrt(2.0)};
    const auto g = lj.gradient(x);
    const auto fd = central_difference(lj, x, 1e-6);
    EXPECT_LE(norm(g - fd), 1e-6 * norm(g));
}

TEST(Potential, EvenAndOddExactlyOnRandomPoints)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const PairPotential pots[] = {PairPotential::lennard_jones(1.0, 1.0, 3).truncate_and_shift(2.5),
                                  PairPotential::lennard_jones(0.7, 1.3, 3), PairPotential::smooth_bump(1.5, 2.0, 3),
                                  PairPotential::zero(3)};
    for (const auto& p : pots) {
        for (int t = 0; t < 2000; ++t) {
            const Vec<3> x{u(rng), u(rng), u(rng)};
            EXPECT_EQ(p.evaluate(x), p.evaluate(-x));
            EXPECT_EQ(p.gradient(-x), -p.gradient(x));
        }
    }
}

TEST(Potential, GradientMatchesFiniteDifferenceProperty)
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.4, 2.4);
    const PairPotential pots[] = {PairPotential::lennard_jones(1.0, 1.0, 2).truncate_and_shift(2.5),
                                  PairPotential::smooth_bump(1.5, 2.0, 2)};
    for (const auto& p : pots) {
        int checked = 0;
        while (checked < 2000) {
            const Vec<2> x{u(rng), u(rng)};
            const double r = norm(x);
            if (r < 0.8 || std::fabs(r - 2.5) < 1e-3 || std::fabs(r - 2.0) < 1e-3) continue;
            const auto g = p.gradient(x);
            const double h = 1e-6 * std::fmax(1.0, r);
            EXPECT_LE(norm(g - central_difference(p, x, h)), 1e-5 * (1.0 + norm(g))) << "r=" << r;
            ++checked;
        }
    }
}

TEST(Potential, TruncateAndShift)
{
    const auto lj = PairPotential::lennard_jones(1.0, 1.0, 2).truncate_and_shift(2.5);
    // 4 (2.5^-12 - 2.5^-6), evaluated by hand: 2.5^-6 = 0.004096, 2.5^-12 = 1.6777216e-5.
    EXPECT_NEAR(lj.shift_constant(), -0.016316891136, 1e-15);
    EXPECT_LT(std::fabs(lj.evaluate(Vec<2>{2.5 - 1e-9, 0.0})), 1e-6);
    EXPECT_EQ(lj.evaluate(Vec<2>{2.5, 0.0}), 0.0);
    EXPECT_EQ(lj.evaluate(Vec<2>{0.0, 3.0}), 0.0);
    EXPECT_EQ(lj.gradient(Vec<2>{0.0, 3.0}), (Vec<2>{0.0, 0.0}));
    const double jump = std::fabs(lj.radial(std::nextafter(2.5, 0.0)) - lj.radial(2.5));
    EXPECT_LT(jump, 1e-12);
    EXPECT_EQ(lj.truncate_and_shift(2.5), lj);
    EXPECT_EQ(lj.untruncated(), PairPotential::lennard_jones(1.0, 1.0, 2));
}

TEST(Potential, TruncateZeroStaysZero)
{
    const auto z = PairPotential::zero(3);
    EXPECT_EQ(z.truncate_and_shift(1.7), z);
    EXPECT_EQ(z.truncate_and_shift(1.7).evaluate(Vec<3>{0.1, 0.2, 0.3}), 0.0);
}

TEST(Potential, UsageErrors)
{
    const auto lj = PairPotential::lennard_jones(1.0, 1.0, 2);
    EXPECT_THROW(lj.truncate_and_shift(0.0), UsageError);
    EXPECT_THROW(lj.truncate_and_shift(1e-13), UsageError);
    EXPECT_THROW(lj.evaluate(Vec<3>{1.0, 0.0, 0.0}), UsageError);
    EXPECT_THROW(PairPotential::lennard_jones(1.0, 1.0, 4), UsageError);
    EXPECT_THROW(PairPotential::lennard_jones(-1.0, 1.0, 2), UsageError);
    EXPECT_THROW(potential_kind_from_string("morse"), UsageError);
    EXPECT_EQ(potential_kind_from_string("lj"), PotentialKind::LennardJones);
}

TEST(Potential, SmoothBumpProfile)
{
    const auto b = PairPotential::smooth_bump(2.0, 1.0, 1);
    EXPECT_DOUBLE_EQ(b.evaluate(Vec<1>{0.0}), 2.0);
    EXPECT_DOUBLE_EQ(b.evaluate(Vec<1>{0.5}), 2.0 * 0.75 * 0.75 * 0.75);
    EXPECT_EQ(b.evaluate(Vec<1>{1.0}), 0.0);
    EXPECT_EQ(b.interaction_range(), 1.0);
}

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace tagdiff {

/// SplitMix64 finalizer. Used to turn structured seeds (base ^ index) into
/// well-separated engine seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a, 64 bit.
constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed of the index-th member of a family rooted at `base` (base XOR index, then mixed).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept
{
    return splitmix64(base ^ index);
}

/// Seed of a named pipeline stage: master XOR-folded with the stage-name hash.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::uint64_t index = 0) noexcept
{
    return splitmix64(master ^ fnv1a64(stage) ^ splitmix64(index));
}

/// A reproducible random stream. One stream per worker; never shared. The Boost
/// distributions (ziggurat normals) give the same numbers on every standard library.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(splitmix64(seed)), seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    double uniform() { return unif_(engine_); }
    double uniform(double a, double b) { return a + (b - a) * unif_(engine_); }
    double normal() { return gauss_(engine_); }

    std::size_t index(std::size_t n)
    {
        return boost::random::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    boost::random::uniform_01<double> unif_;
    boost::random::normal_distribution<double> gauss_{0.0, 1.0};
};

} // namespace tagdiff

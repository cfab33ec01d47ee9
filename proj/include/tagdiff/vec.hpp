#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace tagdiff {

/// Fixed-dimension real vector. Plain aggregate so it stays trivially copyable.
template <std::size_t D>
using Vec = std::array<double, D>;

template <std::size_t D>
constexpr Vec<D> zero_vec() noexcept
{
    Vec<D> v{};
    v.fill(0.0);
    return v;
}

template <std::size_t D>
constexpr Vec<D> unit_vec(std::size_t axis) noexcept
{
    Vec<D> v = zero_vec<D>();
    v[axis] = 1.0;
    return v;
}

template <std::size_t D>
constexpr Vec<D> operator+(const Vec<D>& a, const Vec<D>& b) noexcept
{
    Vec<D> r;
    for (std::size_t k = 0; k < D; ++k) r[k] = a[k] + b[k];
    return r;
}

template <std::size_t D>
constexpr Vec<D> operator-(const Vec<D>& a, const Vec<D>& b) noexcept
{
    Vec<D> r;
    for (std::size_t k = 0; k < D; ++k) r[k] = a[k] - b[k];
    return r;
}

template <std::size_t D>
constexpr Vec<D> operator-(const Vec<D>& a) noexcept
{
    Vec<D> r;
    for (std::size_t k = 0; k < D; ++k) r[k] = -a[k];
    return r;
}

template <std::size_t D>
constexpr Vec<D> operator*(double s, const Vec<D>& a) noexcept
{
    Vec<D> r;
    for (std::size_t k = 0; k < D; ++k) r[k] = s * a[k];
    return r;
}

template <std::size_t D>
constexpr Vec<D>& operator+=(Vec<D>& a, const Vec<D>& b) noexcept
{
    for (std::size_t k = 0; k < D; ++k) a[k] += b[k];
    return a;
}

template <std::size_t D>
constexpr Vec<D>& operator-=(Vec<D>& a, const Vec<D>& b) noexcept
{
    for (std::size_t k = 0; k < D; ++k) a[k] -= b[k];
    return a;
}

template <std::size_t D>
constexpr double dot(const Vec<D>& a, const Vec<D>& b) noexcept
{
    double s = 0.0;
    for (std::size_t k = 0; k < D; ++k) s += a[k] * b[k];
    return s;
}

template <std::size_t D>
constexpr double norm_sq(const Vec<D>& a) noexcept
{
    return dot(a, a);
}

template <std::size_t D>
inline double norm(const Vec<D>& a) noexcept
{
    return std::sqrt(norm_sq(a));
}

template <std::size_t D>
constexpr double max_abs(const Vec<D>& a) noexcept
{
    double m = 0.0;
    for (double x : a) m = (x < 0 ? -x : x) > m ? (x < 0 ? -x : x) : m;
    return m;
}

} // namespace tagdiff

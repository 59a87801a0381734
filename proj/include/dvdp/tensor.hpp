// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_TENSOR_HPP
#define DVDP_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvdp {

//
// error types
//
// shape_error and invalid_argument cover caller mistakes, numeric_error covers
// a computation that cannot proceed (underflow, divergence, unrealizable
// schedule). The CLI maps the first two to exit code 2 and the last to 3.
//
struct shape_error : std::invalid_argument
{
    using std::invalid_argument::invalid_argument;
};

struct numeric_error : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// channels x height x width; flat vectors use 1 x 1 x n
struct TensorShape
{
    std::size_t channels = 1;
    std::size_t height   = 1;
    std::size_t width    = 1;

    constexpr std::size_t size() const noexcept { return channels * height * width; }

    static constexpr TensorShape flat(std::size_t n) noexcept { return {1, 1, n}; }

    friend constexpr bool operator==(const TensorShape&, const TensorShape&) = default;
};

inline std::string to_string(const TensorShape& s)
{
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

struct Tensor
{
    TensorShape         shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(TensorShape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}
    Tensor(TensorShape s, std::vector<double> values) : shape(s), data(std::move(values))
    {
        if (data.size() != shape.size())
            throw shape_error("tensor: " + std::to_string(data.size()) + " values for shape " + to_string(shape));
    }

    std::size_t size() const noexcept { return data.size(); }
    double&       operator[](std::size_t i) { return data[i]; }
    const double& operator[](std::size_t i) const { return data[i]; }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * shape.height + y) * shape.width + x]; }
    double  at(std::size_t c, std::size_t y, std::size_t x) const
    {
        return data[(c * shape.height + y) * shape.width + x];
    }

    std::span<double>       values() noexcept { return data; }
    std::span<const double> values() const noexcept { return data; }

    bool all_finite() const noexcept
    {
        for (double v : data)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Tensor& t)
{
    os << to_string(t.shape) << " [";
    for (std::size_t i = 0; i < t.size() && i < 8; ++i)
        os << (i ? ", " : "") << t.data[i];
    return os << (t.size() > 8 ? ", ...]" : "]");
}

// x_t^k: a tensor tagged with cascade level and timestep
struct LatentState
{
    int    level = 0;
    int    time  = 0;
    Tensor data;
};

//
// small arithmetic helpers used throughout
//

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what)
{
    if (a.shape != b.shape)
        throw shape_error(std::string(what) + ": shape " + to_string(a.shape) + " vs " + to_string(b.shape));
}

// y <- y + alpha * x
inline void axpy(double alpha, const Tensor& x, Tensor& y)
{
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i)
        y.data[i] += alpha * x.data[i];
}

inline Tensor scaled(const Tensor& x, double alpha)
{
    Tensor y = x;
    for (double& v : y.data)
        v *= alpha;
    return y;
}

inline Tensor operator+(const Tensor& a, const Tensor& b)
{
    Tensor r = a;
    axpy(1.0, b, r);
    return r;
}

inline Tensor operator-(const Tensor& a, const Tensor& b)
{
    Tensor r = a;
    axpy(-1.0, b, r);
    return r;
}

inline double dot(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a.data[i] * b.data[i];
    return s;
}

inline double squared_norm(const Tensor& a) { return dot(a, a); }

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

//
// random streams
//
// Every stochastic routine takes an explicit Rng. Batch work derives one
// independent stream per item from (seed, item) so results do not depend on
// how items are scheduled across threads.
//
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline Rng derive_rng(std::uint64_t seed, std::uint64_t item)
{
    return Rng(splitmix64(splitmix64(seed) ^ splitmix64(item + 0x632be59bd9b4e019ULL)));
}

inline double standard_normal(Rng& rng)
{
    std::normal_distribution<double> n01(0.0, 1.0);
    return n01(rng);
}

inline Tensor normal_tensor(TensorShape shape, Rng& rng)
{
    Tensor t(shape);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& v : t.data)
        v = n01(rng);
    return t;
}

} // namespace dvdp

#endif // DVDP_TENSOR_HPP

// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_TESTS_TEST_UTIL_HPP
#define DVDP_TESTS_TEST_UTIL_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <dvdp/tensor.hpp>

namespace testing_util {

inline dvdp::Tensor random_tensor(dvdp::TensorShape shape, std::uint64_t seed)
{
    dvdp::Rng rng(seed);
    return dvdp::normal_tensor(shape, rng);
}

struct Moments
{
    double mean     = 0.0;
    double variance = 0.0;
    std::size_t n   = 0;

    double mean_stderr() const { return std::sqrt(variance / double(n)); }
};

inline Moments moments(const std::vector<double>& xs)
{
    Moments m;
    m.n = xs.size();
    for (double x : xs)
        m.mean += x;
    m.mean /= double(m.n);
    for (double x : xs)
        m.variance += (x - m.mean) * (x - m.mean);
    m.variance /= double(m.n - 1);
    return m;
}

// asymptotic Kolmogorov distribution tail P(K > lambda)
inline double kolmogorov_tail(double lambda)
{
    if (lambda < 1e-3)
        return 1.0;
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j)
        sum += (j % 2 ? 2.0 : -2.0) * std::exp(-2.0 * j * j * lambda * lambda);
    return std::clamp(sum, 0.0, 1.0);
}

inline std::string read_bytes(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir
{
    std::filesystem::path path;

    explicit TempDir(const std::string& tag)
    {
        path = std::filesystem::temp_directory_path() /
               ("dvdp_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    TempDir(const TempDir&)            = delete;
    TempDir& operator=(const TempDir&) = delete;
};

} // namespace testing_util

#endif // DVDP_TESTS_TEST_UTIL_HPP

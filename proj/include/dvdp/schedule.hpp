// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_SCHEDULE_HPP
#define DVDP_SCHEDULE_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cascade.hpp"
#include "tensor.hpp"

namespace dvdp {

struct ScheduleParams
{
    int              steps           = 1000; // T
    std::vector<int> turning_points  = {600};
    double           lambda_min      = 0.01;
    double           beta_lo         = 1e-4;
    double           beta_hi         = 0.02;
};

inline void validate_turning_points(int steps, const std::vector<int>& tps)
{
    if (steps < 1)
        throw std::invalid_argument("schedule: T must be positive");
    int prev = 0;
    for (int tp : tps) {
        if (tp <= prev)
            throw std::invalid_argument("schedule: turning points must satisfy 0 < T_1 < ... < T_K");
        prev = tp;
    }
    if (!tps.empty() && tps.back() >= steps)
        throw std::invalid_argument("schedule: last turning point must be below T");
}

//
// Attenuation table lambda_bar[k][t], k in [0, K], t in [0, T].
//
// Level k < K decays exponentially from 1 to lambda_min across its window
// (T_k, T_{k+1}] and stays at lambda_min afterwards; the deepest level is never
// attenuated.
//
inline std::vector<std::vector<double>> build_attenuation(int steps, const std::vector<int>& tps, double lambda_min)
{
    validate_turning_points(steps, tps);
    if (!(lambda_min > 0.0 && lambda_min < 1.0))
        throw std::invalid_argument("schedule: lambda_min must lie in (0, 1)");

    const int                        levels = int(tps.size());
    std::vector<std::vector<double>> table(std::size_t(levels + 1), std::vector<double>(std::size_t(steps + 1), 1.0));
    for (int k = 0; k < levels; ++k) {
        const int lo = k == 0 ? 0 : tps[std::size_t(k - 1)];
        const int hi = tps[std::size_t(k)];
        for (int t = lo + 1; t <= steps; ++t)
            table[std::size_t(k)][std::size_t(t)] =
                t > hi ? lambda_min : std::pow(lambda_min, double(t - lo) / double(hi - lo));
    }
    return table;
}

//
// Noise table sigma_bar[t], t in [0, T]: DDPM linear betas converted to the
// sigma_bar = sqrt(1/alpha_bar - 1) parameterisation, then stretched after each
// turning point by the downsampling factor so the terminal SNR roughly matches
// the fixed-dimension process.
//
inline std::vector<double> build_noise(int                             steps,
                                       const std::vector<int>&         tps,
                                       const std::vector<std::size_t>& factors,
                                       double                          beta_lo,
                                       double                          beta_hi)
{
    validate_turning_points(steps, tps);
    if (!(beta_lo > 0.0 && beta_lo < beta_hi && beta_hi < 1.0))
        throw std::invalid_argument("schedule: need 0 < beta_lo < beta_hi < 1");
    if (factors.size() != tps.size())
        throw std::invalid_argument("schedule: one downsampling factor per turning point required");

    std::vector<double> sigma(std::size_t(steps + 1), 0.0);
    double              log_alpha_bar = 0.0;
    for (int t = 1; t <= steps; ++t) {
        const double beta = steps == 1 ? beta_lo : beta_lo + (beta_hi - beta_lo) * double(t - 1) / double(steps - 1);
        log_alpha_bar += std::log1p(-beta);
        sigma[std::size_t(t)] = std::sqrt(std::expm1(-log_alpha_bar));
    }
    for (std::size_t k = 0; k < tps.size(); ++k) {
        const auto   tk     = std::size_t(tps[k]);
        const double anchor = sigma[tk - 1];
        const double f      = double(factors[k]);
        for (std::size_t t = tk; t <= std::size_t(steps); ++t)
            sigma[t] = anchor + f * (sigma[t] - anchor);
    }
    sigma[0] = 0.0;
    for (std::size_t t = 1; t < sigma.size(); ++t)
        if (!(sigma[t] > sigma[t - 1]))
            throw numeric_error("schedule: sigma_bar not strictly increasing at t=" + std::to_string(t));
    return sigma;
}

// one-step (or multi-step) forward coefficients of a level as diagonal pairs
struct StepCoeffs
{
    DiagPair lambda;    // Lambda: attenuation ratio
    DiagPair noise_var; // L^2
    DiagPair noise_std; // L
};

class DvdpSchedule
{
public:
    static DvdpSchedule build(int                             steps,
                              const std::vector<int>&         tps,
                              const std::vector<std::size_t>& factors,
                              double                          lambda_min,
                              double                          beta_lo,
                              double                          beta_hi)
    {
        DvdpSchedule s;
        s.steps_          = steps;
        s.turning_points_ = tps;
        s.lambda_min_     = lambda_min;
        s.lambda_bar_     = build_attenuation(steps, tps, lambda_min);
        s.sigma_bar_      = build_noise(steps, tps, factors, beta_lo, beta_hi);
        return s;
    }

    static DvdpSchedule build(const SubspaceCascade& cascade, const ScheduleParams& p)
    {
        if (int(p.turning_points.size()) != cascade.levels())
            throw std::invalid_argument("schedule: " + std::to_string(p.turning_points.size()) +
                                        " turning points for a cascade with K=" + std::to_string(cascade.levels()));
        return build(p.steps, p.turning_points, cascade.factors(), p.lambda_min, p.beta_lo, p.beta_hi);
    }

    // schedule from explicit tables; only the structural invariants are checked
    static DvdpSchedule from_tables(int                              steps,
                                    const std::vector<int>&          tps,
                                    std::vector<std::vector<double>> lambda_bar,
                                    std::vector<double>              sigma_bar)
    {
        validate_turning_points(steps, tps);
        if (sigma_bar.size() != std::size_t(steps + 1) || sigma_bar.front() != 0.0)
            throw std::invalid_argument("schedule: sigma table needs T+1 entries starting at 0");
        for (int t = 1; t <= steps; ++t)
            if (!(sigma_bar[std::size_t(t)] > sigma_bar[std::size_t(t - 1)]))
                throw std::invalid_argument("schedule: sigma table must be strictly increasing");
        DvdpSchedule s;
        s.steps_          = steps;
        s.turning_points_ = tps;
        s.sigma_bar_      = std::move(sigma_bar);
        s.lambda_bar_     = std::vector<std::vector<double>>(tps.size() + 1);
        s.lambda_min_     = 0.0;
        return s.with_attenuation(std::move(lambda_bar));
    }

    // same turning points and noise, different attenuation table
    DvdpSchedule with_attenuation(std::vector<std::vector<double>> table) const
    {
        if (table.size() != lambda_bar_.size())
            throw std::invalid_argument("schedule: attenuation table has wrong level count");
        for (const auto& row : table)
            if (row.size() != sigma_bar_.size())
                throw std::invalid_argument("schedule: attenuation table has wrong length");
        DvdpSchedule s = *this;
        s.lambda_bar_  = std::move(table);
        return s;
    }

    int    steps() const noexcept { return steps_; }
    int    levels() const noexcept { return int(turning_points_.size()); }
    double lambda_min() const noexcept { return lambda_min_; }

    const std::vector<int>&                 turning_points() const noexcept { return turning_points_; }
    const std::vector<std::vector<double>>& lambda_table() const noexcept { return lambda_bar_; }
    const std::vector<double>&              sigma_table() const noexcept { return sigma_bar_; }

    // T_k with sentinels T_0 = 0 and T_{K+1} = T
    int turning_point(int k) const
    {
        if (k < 0 || k > levels() + 1)
            throw std::out_of_range("schedule: turning point index out of range");
        if (k == 0)
            return 0;
        if (k == levels() + 1)
            return steps_;
        return turning_points_[std::size_t(k - 1)];
    }

    double lambda_bar(int k, int t) const { return lambda_bar_.at(std::size_t(k)).at(std::size_t(t)); }
    double sigma_bar(int t) const { return sigma_bar_.at(std::size_t(t)); }

    // level whose window (T_k, T_{k+1}] contains t; t = 0 belongs to level 0
    int level_at(int t) const
    {
        check_time(t);
        int k = 0;
        while (k < levels() && t > turning_point(k + 1))
            ++k;
        return k;
    }

    bool in_window(int k, int t) const { return t > turning_point(k) && t <= turning_point(k + 1); }

    //
    // (lambda_bar_{k,t}, lambda_bar_{k+1,t}) as a diagonal pair. Only valid for
    // t <= T_{k+1}, where every deeper coefficient is still 1.
    //
    DiagPair lambda_pair(int k, int t) const
    {
        check_level(k);
        check_time(t);
        if (t > turning_point(k + 1))
            throw std::out_of_range("schedule: t=" + std::to_string(t) + " beyond the window of level " +
                                    std::to_string(k));
        return {lambda_bar(k, t), 1.0};
    }

    DiagPair sigma_pair(int t) const { return {sigma_bar(t), sigma_bar(t)}; }

    //
    // Coefficients of x_t = U Lambda U^T x_s + U L U^T eps for s < t inside one
    // level: Lambda = Lambda_bar_t / Lambda_bar_s, L^2 = L_bar_t^2 - Lambda^2 L_bar_s^2.
    //
    StepCoeffs transfer_coeffs(int k, int s, int t) const
    {
        check_level(k);
        if (!(s < t) || s < turning_point(k) || t > turning_point(k + 1))
            throw std::out_of_range("schedule: transfer " + std::to_string(s) + "->" + std::to_string(t) +
                                    " outside level " + std::to_string(k));
        const DiagPair lt = lambda_pair(k, t);
        const DiagPair ls = lambda_pair(k, s);
        const double   st = sigma_bar(t);
        const double   ss = sigma_bar(s);

        StepCoeffs c;
        c.lambda    = {lt.a / ls.a, lt.b / ls.b};
        c.noise_var = {st * st - c.lambda.a * c.lambda.a * ss * ss, st * st - c.lambda.b * c.lambda.b * ss * ss};
        if (c.noise_var.a < 0.0 || c.noise_var.b < 0.0)
            throw numeric_error("schedule: unrealizable transition at level " + std::to_string(k) + ", t=" +
                                std::to_string(t) + " (L^2 < 0)");
        c.noise_std = {std::sqrt(c.noise_var.a), std::sqrt(c.noise_var.b)};
        return c;
    }

    StepCoeffs step_coeffs(int k, int t) const
    {
        check_level(k);
        if (!in_window(k, t))
            throw std::out_of_range("schedule: t=" + std::to_string(t) + " not in window of level " +
                                    std::to_string(k));
        return transfer_coeffs(k, t - 1, t);
    }

    // FNV-1a over the tables; identifies a schedule inside checkpoints
    std::uint64_t hash() const
    {
        std::uint64_t h   = 0xcbf29ce484222325ULL;
        auto          mix = [&h](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                h ^= (v >> (8 * i)) & 0xffU;
                h *= 0x100000001b3ULL;
            }
        };
        mix(std::uint64_t(steps_));
        for (int tp : turning_points_)
            mix(std::uint64_t(tp));
        for (const auto& row : lambda_bar_)
            for (double v : row)
                mix(std::bit_cast<std::uint64_t>(v));
        for (double v : sigma_bar_)
            mix(std::bit_cast<std::uint64_t>(v));
        return h;
    }

private:
    void check_level(int k) const
    {
        if (k < 0 || k > levels())
            throw std::out_of_range("schedule: level " + std::to_string(k) + " out of range");
    }

    void check_time(int t) const
    {
        if (t < 0 || t > steps_)
            throw std::out_of_range("schedule: timestep " + std::to_string(t) + " out of range");
    }

    int                              steps_ = 0;
    std::vector<int>                 turning_points_;
    double                           lambda_min_ = 0.01;
    std::vector<std::vector<double>> lambda_bar_;
    std::vector<double>              sigma_bar_;
};

} // namespace dvdp

#endif // DVDP_SCHEDULE_HPP

// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_PROCESS_HPP
#define DVDP_PROCESS_HPP

#include <string>
#include <vector>

#include "cascade.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace dvdp {

// a cascade paired with a schedule over the same number of turning points
struct DvdpProcess
{
    SubspaceCascade cascade;
    DvdpSchedule    schedule;

    DvdpProcess(SubspaceCascade c, DvdpSchedule s) : cascade(std::move(c)), schedule(std::move(s))
    {
        if (cascade.levels() != schedule.levels())
            throw std::invalid_argument("process: cascade has K=" + std::to_string(cascade.levels()) +
                                        " but schedule has " + std::to_string(schedule.levels()) +
                                        " turning points");
    }

    static DvdpProcess build(const SubspaceCascade& c, const ScheduleParams& p)
    {
        return DvdpProcess(c, DvdpSchedule::build(c, p));
    }

    int levels() const noexcept { return cascade.levels(); }
    int steps() const noexcept { return schedule.steps(); }
};

struct ForwardPosterior
{
    Tensor   mean;
    DiagPair variance;
};

// mu_tilde = U diag(x0_coeff) U^T x0 + U diag(xt_coeff) U^T x_t, Sigma_tilde = U diag(variance) U^T
struct PosteriorCoeffs
{
    DiagPair x0_coeff;
    DiagPair xt_coeff;
    DiagPair variance;
};

inline void check_state(const DvdpProcess& p, const LatentState& x, const char* what)
{
    if (x.level < 0 || x.level > p.levels())
        throw std::out_of_range(std::string(what) + ": level " + std::to_string(x.level) + " out of range");
    if (x.time < 0 || x.time > p.steps())
        throw std::out_of_range(std::string(what) + ": time " + std::to_string(x.time) + " out of range");
    if (x.data.shape != p.cascade.shape(x.level))
        throw shape_error(std::string(what) + ": data shape " + to_string(x.data.shape) + " does not match level " +
                          std::to_string(x.level));
}

//
// x_t^k = U Lambda_bar U^T x0^k + sigma_bar_t eps, with x0^k = Dbar_k x0 already
// projected by the caller.
//
inline LatentState marginal_sample(const DvdpProcess& p, const Tensor& x0k, int k, int t, const Tensor& eps)
{
    require_same_shape(x0k, eps, "marginal_sample");
    if (x0k.shape != p.cascade.shape(k))
        throw shape_error("marginal_sample: x0 shape " + to_string(x0k.shape) + " is not level " + std::to_string(k));
    const DiagPair lam = p.schedule.lambda_pair(k, t);
    Tensor         x   = p.cascade.apply_diag_pair(k, lam, x0k);
    axpy(p.schedule.sigma_bar(t), eps, x);
    return {k, t, std::move(x)};
}

// one forward step x_{t-1}^k -> x_t^k
inline LatentState transition_sample(const DvdpProcess& p, const LatentState& prev, const Tensor& eps)
{
    check_state(p, prev, "transition_sample");
    require_same_shape(prev.data, eps, "transition_sample");
    const int k = prev.level;
    const int t = prev.time + 1;
    if (prev.time < p.schedule.turning_point(k) || t > p.schedule.turning_point(k + 1))
        throw std::out_of_range("transition_sample: step " + std::to_string(prev.time) + "->" + std::to_string(t) +
                                " leaves the window of level " + std::to_string(k));
    const StepCoeffs c = p.schedule.step_coeffs(k, t);
    Tensor           x = p.cascade.apply_diag_pair(k, c.lambda, prev.data);
    x                  = x + p.cascade.apply_diag_pair(k, c.noise_std, eps);
    return {k, t, std::move(x)};
}

inline PosteriorCoeffs posterior_coeffs(const DvdpProcess& p, int k, int t)
{
    if (t < 1)
        throw std::out_of_range("posterior: undefined at t=0");
    const double sigma_t = p.schedule.sigma_bar(t);
    if (sigma_t == 0.0)
        throw numeric_error("posterior: sigma_bar_t is zero");
    const StepCoeffs c      = p.schedule.step_coeffs(k, t);
    const DiagPair   lam_s  = p.schedule.lambda_pair(k, t - 1);
    const double     sig_s2 = p.schedule.sigma_bar(t - 1) * p.schedule.sigma_bar(t - 1);
    const double     sig_t2 = sigma_t * sigma_t;

    PosteriorCoeffs pc;
    pc.x0_coeff = {lam_s.a * c.noise_var.a / sig_t2, lam_s.b * c.noise_var.b / sig_t2};
    pc.xt_coeff = {c.lambda.a * sig_s2 / sig_t2, c.lambda.b * sig_s2 / sig_t2};
    pc.variance = {c.noise_var.a * sig_s2 / sig_t2, c.noise_var.b * sig_s2 / sig_t2};
    return pc;
}

// q(x_{t-1}^k | x_t^k, x_0^k)
inline ForwardPosterior posterior(const DvdpProcess& p, const LatentState& xt, const Tensor& x0k)
{
    check_state(p, xt, "posterior");
    require_same_shape(xt.data, x0k, "posterior");
    const PosteriorCoeffs pc = posterior_coeffs(p, xt.level, xt.time);
    Tensor mean = p.cascade.apply_diag_pair(xt.level, pc.x0_coeff, x0k) +
                  p.cascade.apply_diag_pair(xt.level, pc.xt_coeff, xt.data);
    return {std::move(mean), pc.variance};
}

inline void require_turning_point(const DvdpProcess& p, int k, int t, const char* what)
{
    if (k < 1 || k > p.levels() || t != p.schedule.turning_point(k))
        throw std::out_of_range(std::string(what) + ": t=" + std::to_string(t) + " is not turning point T_" +
                                std::to_string(k));
}

// x_{T_k}^{k-1} -> x_{T_k}^k
inline LatentState turn_down(const DvdpProcess& p, const LatentState& x)
{
    check_state(p, x, "turn_down");
    const int k = x.level + 1;
    require_turning_point(p, k, x.time, "turn_down");
    return {k, x.time, p.cascade.downsample(k, x.data)};
}

//
// What turn_down throws away: x - D_k^T D_k x. For a forward state this is
// lambda_bar_{k-1,T_k} v_{k-1} + sigma_bar_{T_k} z_{k-1}.
//
inline Tensor lost_component(const DvdpProcess& p, const LatentState& x)
{
    check_state(p, x, "lost_component");
    const int k = x.level + 1;
    require_turning_point(p, k, x.time, "lost_component");
    return x.data - p.cascade.project_retained(x.level, x.data);
}

//
// x_0^0 -> ... -> x_{T_1}^0 -> x_{T_1}^1 -> ... -> x_T^K
//
// T + K + 1 states; each turning point appears twice (before and after the
// downsampling) with the same time index.
//
inline std::vector<LatentState> forward_trajectory(const DvdpProcess& p, const Tensor& x0, Rng& rng)
{
    if (x0.shape != p.cascade.shape(0))
        throw shape_error("forward_trajectory: x0 must have the level-0 shape");
    std::vector<LatentState> states;
    states.reserve(std::size_t(p.steps() + p.levels() + 1));
    states.push_back({0, 0, x0});
    for (int k = 0; k <= p.levels(); ++k) {
        if (k > 0)
            states.push_back(turn_down(p, states.back()));
        const int end = p.schedule.turning_point(k + 1);
        while (states.back().time < end) {
            const Tensor eps = normal_tensor(p.cascade.shape(k), rng);
            states.push_back(transition_sample(p, states.back(), eps));
        }
    }
    return states;
}

} // namespace dvdp

#endif // DVDP_PROCESS_HPP

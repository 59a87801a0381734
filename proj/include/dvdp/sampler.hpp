// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_SAMPLER_HPP
#define DVDP_SAMPLER_HPP

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "denoiser.hpp"
#include "process.hpp"

namespace dvdp {

enum class SamplerMode
{
    ancestral,
    ddim
};

inline const char* to_string(SamplerMode m) { return m == SamplerMode::ancestral ? "ancestral" : "ddim"; }

// closed timestep interval on which ddim steps inject full ancestral noise
struct EtaWindow
{
    int start = 0;
    int end   = 0;

    bool contains(int t) const noexcept { return t >= start && t <= end; }
};

struct SamplerConfig
{
    SamplerMode mode       = SamplerMode::ancestral;
    int         ddim_steps = 250;
    // when eta_auto is set the window follows the first turning point (see default_eta_window)
    bool                     eta_auto = true;
    std::optional<EtaWindow> eta_window;
    // x_{t-1} = x0_hat + Sigma_t xi, kept only to compare against the plain posterior-mean update
    bool          literal_update = false;
    std::uint64_t seed           = 0;
    unsigned      threads        = 0; // 0: hardware concurrency, still capped by DVDP_THREADS
};

//
// [T1 - floor(T1/4), T1 + ceil((T2 - T1)/2)], with T2 = T when there is a
// single turning point. No window without turning points.
//
inline std::optional<EtaWindow> default_eta_window(const DvdpSchedule& s)
{
    if (s.levels() == 0)
        return std::nullopt;
    const int t1 = s.turning_point(1);
    const int t2 = s.turning_point(2);
    return EtaWindow{t1 - t1 / 4, t1 + (t2 - t1 + 1) / 2};
}

inline std::optional<EtaWindow> resolve_eta_window(const SamplerConfig& cfg, const DvdpSchedule& s)
{
    const std::optional<EtaWindow> w = cfg.eta_auto ? default_eta_window(s) : cfg.eta_window;
    if (w && (w->start < 0 || w->end > s.steps() || w->start > w->end))
        throw std::invalid_argument("sampler: eta window [" + std::to_string(w->start) + ", " + std::to_string(w->end) +
                                    "] outside [0, " + std::to_string(s.steps()) + "]");
    return w;
}

// x0_hat = U Lambda_bar^{-1} U^T x_t - U Lambda_bar^{-1} L_bar U^T eps_hat
inline Tensor predict_x0(const DvdpProcess& p, const LatentState& x, const Tensor& eps_hat)
{
    check_state(p, x, "predict_x0");
    require_same_shape(x.data, eps_hat, "predict_x0");
    const DiagPair lam = p.schedule.lambda_pair(x.level, x.time);
    if (lam.a < 1e-12 || lam.b < 1e-12)
        throw numeric_error("predict_x0: lambda_bar underflow at t=" + std::to_string(x.time));
    const double sigma = p.schedule.sigma_bar(x.time);
    Tensor       out   = p.cascade.apply_diag_pair(x.level, 1.0 / lam.a, 1.0 / lam.b, x.data);
    axpy(-1.0, p.cascade.apply_diag_pair(x.level, sigma / lam.a, sigma / lam.b, eps_hat), out);
    return out;
}

//
// One reverse step given the denoiser output. `xi` is the standard normal
// draw, ignored at t = 1 where the step is the posterior mean.
//
inline LatentState ancestral_update(const DvdpProcess& p, const LatentState& x, const Tensor& eps_hat, const Tensor* xi,
                                    bool literal = false, Tensor* x0_hat_out = nullptr)
{
    if (x.time < 1)
        throw std::out_of_range("ancestral_step: no step below t=0");
    Tensor                x0_hat = predict_x0(p, x, eps_hat);
    const PosteriorCoeffs pc     = posterior_coeffs(p, x.level, x.time);
    const int             k      = x.level;

    Tensor next = literal ? x0_hat
                          : p.cascade.apply_diag_pair(k, pc.x0_coeff, x0_hat) +
                                p.cascade.apply_diag_pair(k, pc.xt_coeff, x.data);
    if (xi != nullptr && x.time >= 2) {
        require_same_shape(x.data, *xi, "ancestral_step");
        const DiagPair scale = literal ? pc.variance : DiagPair{std::sqrt(pc.variance.a), std::sqrt(pc.variance.b)};
        axpy(1.0, p.cascade.apply_diag_pair(k, scale, *xi), next);
    }
    if (x0_hat_out != nullptr)
        *x0_hat_out = std::move(x0_hat);
    return {k, x.time - 1, std::move(next)};
}

template <Denoiser D>
LatentState ancestral_step(const DvdpProcess& p, const LatentState& x, const D& denoiser, Rng& rng, bool literal = false)
{
    check_state(p, x, "ancestral_step");
    const Tensor eps_hat = denoiser.evaluate(x);
    require_same_shape(x.data, eps_hat, "ancestral_step: denoiser output");
    if (x.time >= 2) {
        const Tensor xi = normal_tensor(x.data.shape, rng);
        return ancestral_update(p, x, eps_hat, &xi, literal);
    }
    return ancestral_update(p, x, eps_hat, nullptr, literal);
}

// x_{T_k}^k -> x_{T_k}^{k-1}: D_k^T x + sigma_bar_{T_k} (I - D_k^T D_k) xi
inline LatentState turn_up(const DvdpProcess& p, const LatentState& x, const Tensor& xi)
{
    check_state(p, x, "turn_up");
    require_turning_point(p, x.level, x.time, "turn_up");
    const int k = x.level;
    require_same_shape(xi, Tensor(p.cascade.shape(k - 1)), "turn_up: noise");
    Tensor up = p.cascade.upsample(k, x.data);
    axpy(1.0, p.cascade.apply_diag_pair(k - 1, p.schedule.sigma_bar(x.time), 0.0, xi), up);
    return {k - 1, x.time, std::move(up)};
}

inline LatentState turn_up(const DvdpProcess& p, const LatentState& x, Rng& rng)
{
    check_state(p, x, "turn_up");
    require_turning_point(p, x.level, x.time, "turn_up");
    return turn_up(p, x, normal_tensor(p.cascade.shape(x.level - 1), rng));
}

// x_T^K ~ N(0, sigma_bar_T^2 I)
inline LatentState initial_state(const DvdpProcess& p, Rng& rng)
{
    Tensor x = normal_tensor(p.cascade.shape(p.levels()), rng);
    return {p.levels(), p.steps(), scaled(x, p.schedule.sigma_bar(p.steps()))};
}

//
// Timesteps visited by the ddim sampler, one descending list per level
// starting at level K. Level k gets max(1, round(N (T_{k+1} - T_k) / T))
// evenly spaced steps from T_{k+1} down to T_k, both ends included.
//
inline std::vector<std::vector<int>> ddim_timesteps(const DvdpSchedule& s, int steps)
{
    if (steps < 1 || steps > s.steps())
        throw std::invalid_argument("sampler: ddim_steps must lie in [1, " + std::to_string(s.steps()) + "]");
    std::vector<std::vector<int>> plan;
    for (int k = s.levels(); k >= 0; --k) {
        const int lo  = s.turning_point(k);
        const int hi  = s.turning_point(k + 1);
        const int len = hi - lo;
        const int n = std::clamp(int(std::lround(double(steps) * len / double(s.steps()))), 1, len);
        std::vector<int> ts;
        for (int i = n; i >= 0; --i) {
            const int t = lo + int(std::lround(double(len) * i / double(n)));
            if (ts.empty() || ts.back() != t)
                ts.push_back(t);
        }
        plan.push_back(std::move(ts));
    }
    return plan;
}

//
// Generalised ddim step t -> s inside level k (s < t):
//   x_s = A_s x0_hat + sqrt(sigma_s^2 - c^2) eps_hat + c xi,
//   c^2 = eta^2 L_{s->t}^2 sigma_s^2 / sigma_t^2   (per diagonal block).
// eta = 1 with s = t - 1 reproduces the ancestral step.
//
inline LatentState ddim_update(const DvdpProcess& p, const LatentState& x, int s, const Tensor& eps_hat, double eta,
                               const Tensor* xi, Tensor* x0_hat_out = nullptr)
{
    const int k = x.level;
    Tensor    x0_hat = predict_x0(p, x, eps_hat);
    const StepCoeffs tc    = p.schedule.transfer_coeffs(k, s, x.time);
    const double     sig_s = p.schedule.sigma_bar(s);
    const double     sig_t = p.schedule.sigma_bar(x.time);
    const double     ratio = eta * eta * sig_s * sig_s / (sig_t * sig_t);
    const DiagPair   c2{ratio * tc.noise_var.a, ratio * tc.noise_var.b};
    const DiagPair   keep{std::sqrt(std::max(0.0, sig_s * sig_s - c2.a)), std::sqrt(std::max(0.0, sig_s * sig_s - c2.b))};

    Tensor next = p.cascade.apply_diag_pair(k, p.schedule.lambda_pair(k, s), x0_hat);
    axpy(1.0, p.cascade.apply_diag_pair(k, keep, eps_hat), next);
    if (xi != nullptr && eta > 0.0 && s >= 1)
        axpy(1.0, p.cascade.apply_diag_pair(k, std::sqrt(c2.a), std::sqrt(c2.b), *xi), next);
    if (x0_hat_out != nullptr)
        *x0_hat_out = std::move(x0_hat);
    return {k, s, std::move(next)};
}

// called after every reverse update with the item index, the new state and the x0 estimate behind it
using SampleObserver = std::function<void(std::size_t item, const LatentState& state, const Tensor& x0_hat)>;

namespace detail {

    //
    // Runs a group of chains in lockstep so the denoiser sees one batch per
    // (level, time). Each chain draws from its own generator only, so results
    // do not depend on how chains are grouped.
    //
    template <Denoiser D>
    std::vector<Tensor> run_chains(const DvdpProcess&   p,
                                   const D&             denoiser,
                                   const SamplerConfig& cfg,
                                   std::span<Rng>       rngs,
                                   std::size_t          first_item,
                                   const SampleObserver& observer)
    {
        const std::optional<EtaWindow> window = resolve_eta_window(cfg, p.schedule);
        std::vector<std::vector<int>>  plan;
        if (cfg.mode == SamplerMode::ddim)
            plan = ddim_timesteps(p.schedule, cfg.ddim_steps);

        std::vector<LatentState> states;
        states.reserve(rngs.size());
        for (Rng& rng : rngs)
            states.push_back(initial_state(p, rng));

        std::vector<Tensor> xs(states.size());
        Tensor              x0_hat;
        for (int k = p.levels(); k >= 0; --k) {
            if (k < p.levels()) {
                for (std::size_t i = 0; i < states.size(); ++i)
                    states[i] = turn_up(p, states[i], rngs[i]);
            }
            const int stop = p.schedule.turning_point(k);
            std::size_t cursor = 0; // position in this level's ddim plan
            const std::vector<int>* ts = cfg.mode == SamplerMode::ddim ? &plan[std::size_t(p.levels() - k)] : nullptr;

            while (states.front().time > stop) {
                const int t = states.front().time;
                for (std::size_t i = 0; i < states.size(); ++i)
                    xs[i] = states[i].data;
                const std::vector<Tensor> eps = evaluate_batch(denoiser, k, t, std::span<const Tensor>(xs));
                if (eps.size() != states.size())
                    throw shape_error("sampler: denoiser returned the wrong batch size");

                if (ts == nullptr) {
                    for (std::size_t i = 0; i < states.size(); ++i) {
                        require_same_shape(states[i].data, eps[i], "sampler: denoiser output");
                        std::optional<Tensor> xi;
                        if (t >= 2)
                            xi = normal_tensor(states[i].data.shape, rngs[i]);
                        states[i] = ancestral_update(p, states[i], eps[i], xi ? &*xi : nullptr, cfg.literal_update,
                                                     observer ? &x0_hat : nullptr);
                        if (observer)
                            observer(first_item + i, states[i], x0_hat);
                    }
                } else {
                    ++cursor;
                    const int    s   = (*ts)[cursor];
                    const double eta = window && window->contains(t) ? 1.0 : 0.0;
                    for (std::size_t i = 0; i < states.size(); ++i) {
                        require_same_shape(states[i].data, eps[i], "sampler: denoiser output");
                        std::optional<Tensor> xi;
                        if (eta > 0.0 && s >= 1)
                            xi = normal_tensor(states[i].data.shape, rngs[i]);
                        states[i] = ddim_update(p, states[i], s, eps[i], eta, xi ? &*xi : nullptr,
                                                observer ? &x0_hat : nullptr);
                        if (observer)
                            observer(first_item + i, states[i], x0_hat);
                    }
                }
            }
        }

        std::vector<Tensor> out;
        out.reserve(states.size());
        for (LatentState& s : states) {
            if (!s.data.all_finite())
                throw numeric_error("sampler: non-finite sample");
            out.push_back(std::move(s.data));
        }
        return out;
    }

} // namespace detail

// one sample x_0^0 drawn with the caller's generator
template <Denoiser D>
Tensor sample(const DvdpProcess& p, const D& denoiser, const SamplerConfig& cfg, Rng& rng,
              const SampleObserver& observer = {})
{
    return detail::run_chains(p, denoiser, cfg, std::span<Rng>(&rng, 1), 0, observer).front();
}

// worker count: requested (0 = hardware), capped by DVDP_THREADS when set to a positive value
inline unsigned resolve_threads(unsigned requested)
{
    unsigned n = requested != 0 ? requested : std::max(1U, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DVDP_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap > 0)
            n = std::min(n, unsigned(cap));
    }
    return std::max(1U, n);
}

//
// `count` samples, item i driven by derive_rng(cfg.seed, i). Output is
// identical for every thread count.
//
template <Denoiser D>
std::vector<Tensor> sample_batch(const DvdpProcess& p, const D& denoiser, const SamplerConfig& cfg, std::size_t count)
{
    std::vector<Rng> rngs;
    rngs.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        rngs.push_back(derive_rng(cfg.seed, i));

    std::vector<Tensor> out(count);
    if (count == 0)
        return out;
    const std::size_t shards = std::min<std::size_t>(resolve_threads(cfg.threads), count);
    const std::size_t per    = (count + shards - 1) / shards;

    std::vector<std::exception_ptr> errors(shards);
    auto work = [&](std::size_t shard) {
        const std::size_t lo = shard * per;
        const std::size_t hi = std::min(count, lo + per);
        if (lo >= hi)
            return;
        try {
            auto part = detail::run_chains(p, denoiser, cfg, std::span<Rng>(rngs).subspan(lo, hi - lo), lo, {});
            std::move(part.begin(), part.end(), out.begin() + std::ptrdiff_t(lo));
        } catch (...) {
            errors[shard] = std::current_exception();
        }
    };
    if (shards == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t s = 0; s < shards; ++s)
            pool.emplace_back(work, s);
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return out;
}

} // namespace dvdp

#endif // DVDP_SAMPLER_HPP

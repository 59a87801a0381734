// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_VERIFY_HPP
#define DVDP_VERIFY_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mixture.hpp"
#include "process.hpp"

namespace dvdp {

// V_d(r) = pi^{d/2} r^d / Gamma(d/2 + 1), via logs
inline double log_sphere_volume(int d, double r)
{
    if (d < 1)
        throw std::invalid_argument("sphere_volume: dimension must be >= 1");
    if (!(r >= 0.0))
        throw std::invalid_argument("sphere_volume: radius must be non-negative");
    if (r == 0.0)
        return -std::numeric_limits<double>::infinity();
    return 0.5 * d * std::log(std::numbers::pi) + d * std::log(r) - std::lgamma(0.5 * d + 1.0);
}

inline double sphere_volume(int d, double r) { return std::exp(log_sphere_volume(d, r)); }

//
// Upper bound on JSD between the x-marginals of N(A1 x0, Sigma) and
// N(A2 x0, Sigma) mixed over any x0 with ||x0|| <= B:
//
//   (sqrt2/2) e^{-1/2} B (2 sqrt2 + V_d(r) / (2 pi)^{d/2}) ||Sigma^{-1/2}(A1 - A2)||,
//   r = 2 B ||Sigma^{-1/2} A1||.
//
// All operators are diagonal pairs, so spectral norms are the largest
// absolute block value.
//
inline double prop1_bound(DiagPair a1, DiagPair a2, DiagPair sigma, double b, int d)
{
    if (!(a1.a >= a2.a && a1.b >= a2.b && a2.a >= 0.0 && a2.b >= 0.0))
        throw std::invalid_argument("prop1_bound: requires A1 >= A2 >= 0 blockwise");
    if (!(sigma.a > 0.0 && sigma.b > 0.0))
        throw std::invalid_argument("prop1_bound: Sigma must be positive");
    if (!(b >= 0.0))
        throw std::invalid_argument("prop1_bound: B must be non-negative");
    const double gap = std::max((a1.a - a2.a) / std::sqrt(sigma.a), (a1.b - a2.b) / std::sqrt(sigma.b));
    const double r   = 2.0 * b * std::max(a1.a / std::sqrt(sigma.a), a1.b / std::sqrt(sigma.b));
    const double vol = std::exp(log_sphere_volume(d, r) - 0.5 * d * std::log(2.0 * std::numbers::pi));
    return std::numbers::sqrt2 / 2.0 * std::exp(-0.5) * b * (2.0 * std::numbers::sqrt2 + vol) * gap;
}

//
// Error of stepping over turning point T_k: prop1_bound with
// A1 = (lambda_bar_{k-1,T_k}, 1), A2 = (0, 1), Sigma = sigma_bar_{T_k}^2 I and
// B = sqrt(d).
//
inline double thm1_bound(const DvdpSchedule& s, int k, int d)
{
    if (k < 1 || k > s.levels())
        throw std::out_of_range("thm1_bound: k must name a turning point");
    const int    tk    = s.turning_point(k);
    const double sigma = s.sigma_bar(tk);
    if (!(sigma > 0.0))
        throw numeric_error("thm1_bound: sigma_bar at the turning point is zero");
    const DiagPair a1 = s.lambda_pair(k - 1, tk);
    return prop1_bound(a1, {0.0, a1.b}, {sigma * sigma, sigma * sigma}, std::sqrt(double(d)), d);
}

struct JsdEstimate
{
    double value     = 0.0;
    double std_error = 0.0;
};

inline constexpr std::size_t jsd_min_samples = 10000;

using LogDensity    = std::function<double(const Eigen::VectorXd&)>;
using VectorSampler = std::function<Eigen::VectorXd(Rng&)>;

//
// Monte Carlo JSD(p, q) = E_m[g(r)] with m = (p + q)/2, r = (p - q)/(p + q) and
// g(r) = ((1+r) log(1+r) + (1-r) log(1-r)) / 2, which lies in [0, ln 2].
// Half of the n points come from p and half from q (stratified draw from m).
// Same quantity as (KL(p||m) + KL(q||m))/2, with far lower variance when p ~ q.
//
inline JsdEstimate jsd_estimate(const LogDensity& log_p, const LogDensity& log_q, const VectorSampler& sample_p,
                                const VectorSampler& sample_q, std::size_t n, Rng& rng)
{
    if (n < jsd_min_samples)
        throw std::invalid_argument("jsd_estimate: need at least 10^4 samples");
    auto xlog1p = [](double w, double r) { return w == 0.0 ? 0.0 : w * std::log1p(r); };
    auto g      = [&](const Eigen::VectorXd& x) {
        const double lp = log_p(x);
        const double lq = log_q(x);
        // one side may vanish (r = +-1); both vanishing or a pole is an error
        if (std::isnan(lp) || std::isnan(lq) || std::max(lp, lq) == std::numeric_limits<double>::infinity() ||
            std::max(lp, lq) == -std::numeric_limits<double>::infinity())
            throw numeric_error("jsd_estimate: non-finite density evaluation");
        const double r = std::tanh(0.5 * (lp - lq));
        return 0.5 * (xlog1p(1.0 + r, r) + xlog1p(1.0 - r, -r));
    };

    const std::size_t half = n / 2;
    double            mean[2] = {0.0, 0.0}, m2[2] = {0.0, 0.0};
    for (int side = 0; side < 2; ++side) {
        const VectorSampler& draw = side == 0 ? sample_p : sample_q;
        // Welford running moments
        for (std::size_t i = 0; i < half; ++i) {
            const double v     = g(draw(rng));
            const double delta = v - mean[side];
            mean[side] += delta / double(i + 1);
            m2[side] += delta * (v - mean[side]);
        }
    }
    JsdEstimate e;
    e.value     = 0.5 * (mean[0] + mean[1]);
    e.std_error = 0.5 * std::sqrt((m2[0] / double(half - 1) + m2[1] / double(half - 1)) / double(half));
    return e;
}

//
// Gaussian mixture with full covariances on flat vectors; the closed-form
// marginals of the turning-point analysis.
//
class DenseMixture
{
public:
    void add(double weight, Eigen::VectorXd mean, const Eigen::MatrixXd& cov)
    {
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success)
            throw numeric_error("mixture: covariance not positive definite");
        const Eigen::MatrixXd l = llt.matrixL();
        log_norm_.push_back(std::log(weight) - l.diagonal().array().log().sum() -
                            0.5 * double(mean.size()) * std::log(2.0 * std::numbers::pi));
        weights_.push_back(weight);
        means_.push_back(std::move(mean));
        chol_.push_back(l);
    }

    std::size_t dim() const { return std::size_t(means_.at(0).size()); }

    double log_density(const Eigen::VectorXd& x) const
    {
        std::vector<double> terms(means_.size());
        for (std::size_t j = 0; j < means_.size(); ++j) {
            const Eigen::VectorXd z = chol_[j].triangularView<Eigen::Lower>().solve(x - means_[j]);
            terms[j]                = log_norm_[j] - 0.5 * z.squaredNorm();
        }
        return log_sum_exp(terms);
    }

    Eigen::VectorXd sample(Rng& rng) const
    {
        std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
        const std::size_t                       j = pick(rng);
        Eigen::VectorXd                         z(means_[j].size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
            z[i] = standard_normal(rng);
        return means_[j] + chol_[j] * z;
    }

private:
    std::vector<double>          weights_, log_norm_;
    std::vector<Eigen::VectorXd> means_;
    std::vector<Eigen::MatrixXd> chol_;
};

//
// Shrinks a mixture so that ||x0|| <= radius holds up to a 5-sigma tail:
// each component gets sqrt(d) * 5 * max_std <= radius / 2 and
// ||mean|| <= radius - sqrt(d) * 5 * max_std.
//
inline GaussianMixture clamp_to_ball(GaussianMixture gm, double radius)
{
    gm.validate();
    const double d = double(gm.means.at(0).size());
    for (std::size_t j = 0; j < gm.components(); ++j) {
        double vmax = 0.0;
        for (double v : gm.variances[j])
            vmax = std::max(vmax, v);
        double spread = 5.0 * std::sqrt(d * vmax);
        if (spread > 0.5 * radius) {
            const double f = 0.5 * radius / spread;
            for (double& v : gm.variances[j])
                v *= f * f;
            spread = 0.5 * radius;
        }
        const double norm = std::sqrt(squared_norm(gm.means[j]));
        if (norm > radius - spread)
            gm.means[j] = scaled(gm.means[j], (radius - spread) / norm);
    }
    return gm;
}

struct BoundReport
{
    double      jsd            = 0.0;
    double      std_error      = 0.0;
    double      bound          = 0.0;
    double      lambda_at_turn = 0.0; // lambda_bar_{k-1, T_k}
    double      sigma_at_turn  = 0.0; // sigma_bar_{T_k}
    std::size_t dim            = 0;   // d_bar_{k-1}
    std::size_t reduced_dim    = 0;   // d_bar_k
    int         turning_point  = 0;
    bool        verdict        = false; // jsd <= bound
};

inline void require_dense_mixture_setup(const GaussianMixture& gm, const DvdpProcess& p, int level)
{
    if (p.cascade.backend() != Backend::explicit_dense)
        throw std::invalid_argument("turning_error: needs the explicit backend");
    if (p.cascade.dim(level) > 8)
        throw std::invalid_argument("turning_error: level dimension above 8");
    gm.validate();
    if (gm.shape() != p.cascade.shape(0))
        throw shape_error("turning_error: mixture shape does not match the cascade");
}

// level-k data components: projected means m_j and covariances C_j
inline std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::MatrixXd>>
projected_components(const GaussianMixture& gm, const SubspaceCascade& c, int k)
{
    const Eigen::MatrixXd        proj = c.dense_projection(k);
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
    for (std::size_t j = 0; j < gm.components(); ++j) {
        const Eigen::VectorXd diag =
            Eigen::Map<const Eigen::VectorXd>(gm.variances[j].data(), Eigen::Index(gm.variances[j].size()));
        means.push_back(proj * SubspaceCascade::as_vector(gm.means[j]));
        covs.push_back(proj * diag.asDiagonal() * proj.transpose());
    }
    return {std::move(means), std::move(covs)};
}

// q(x_t^k) = sum_j w_j N(A m_j, A C_j A + sigma_bar_t^2 I), A = G(lambda_bar_{k,t}, lambda_bar_{k+1,t})
inline DenseMixture forward_marginal(const GaussianMixture& gm, const DvdpProcess& p, int k, int t)
{
    require_dense_mixture_setup(gm, p, k);
    if (t < 1 || t > p.schedule.turning_point(k + 1))
        throw std::out_of_range("forward_marginal: t outside the valid range of level k");
    const double          sigma = p.schedule.sigma_bar(t);
    const Eigen::MatrixXd a     = p.cascade.dense_diag_pair(k, p.schedule.lambda_pair(k, t));
    const Eigen::Index    d     = Eigen::Index(p.cascade.dim(k));
    const auto [means, covs]    = projected_components(gm, p.cascade, k);
    DenseMixture out;
    for (std::size_t j = 0; j < gm.components(); ++j)
        out.add(gm.weights[j], a * means[j], a * covs[j] * a + sigma * sigma * Eigen::MatrixXd::Identity(d, d));
    return out;
}

struct TurningMarginals
{
    DenseMixture forward; // q(x_{T_k}) at level k-1
    DenseMixture reverse; // after turn_down then turn_up
};

//
// Both sides at turning point T_k, in level-(k-1) coordinates. The forward
// side is forward_marginal at T_k; the reverse side replaces A by the
// retained-subspace projection P = D_k^T D_k:
//   reverse = sum_j w_j N(P m_j, P C_j P + sigma_bar^2 I)
//
inline TurningMarginals turning_marginals(const GaussianMixture& gm, const DvdpProcess& p, int k)
{
    if (k < 1 || k > p.levels())
        throw std::out_of_range("turning_error: k must name a turning point");
    const int tk = p.schedule.turning_point(k);

    TurningMarginals out;
    out.forward                 = forward_marginal(gm, p, k - 1, tk);
    const double          sigma = p.schedule.sigma_bar(tk);
    const Eigen::MatrixXd keep  = p.cascade.dense_diag_pair(k - 1, {0.0, 1.0});
    const Eigen::Index    d     = Eigen::Index(p.cascade.dim(k - 1));
    const auto [means, covs]    = projected_components(gm, p.cascade, k - 1);
    for (std::size_t j = 0; j < gm.components(); ++j)
        out.reverse.add(gm.weights[j], keep * means[j],
                        keep * covs[j] * keep + sigma * sigma * Eigen::MatrixXd::Identity(d, d));
    return out;
}

// JSD between the two turning marginals, next to the matching bound
inline BoundReport turning_error(const GaussianMixture& gm, const DvdpProcess& p, int k, std::size_t n, Rng& rng)
{
    const TurningMarginals tm = turning_marginals(gm, p, k);
    const JsdEstimate      e  = jsd_estimate([&](const Eigen::VectorXd& x) { return tm.forward.log_density(x); },
                                       [&](const Eigen::VectorXd& x) { return tm.reverse.log_density(x); },
                                       [&](Rng& g) { return tm.forward.sample(g); },
                                       [&](Rng& g) { return tm.reverse.sample(g); }, n, rng);
    const int tk = p.schedule.turning_point(k);

    BoundReport r;
    r.jsd            = e.value;
    r.std_error      = e.std_error;
    r.dim            = p.cascade.dim(k - 1);
    r.reduced_dim    = p.cascade.dim(k);
    r.bound          = thm1_bound(p.schedule, k, int(r.dim));
    r.lambda_at_turn = p.schedule.lambda_bar(k - 1, tk);
    r.sigma_at_turn  = p.schedule.sigma_bar(tk);
    r.turning_point  = tk;
    r.verdict        = r.jsd <= r.bound;
    return r;
}

// every level attenuation set to 1: subspace diffusion inside the same machinery
inline DvdpSchedule subspace_mode(const DvdpSchedule& s)
{
    std::vector<std::vector<double>> ones(s.lambda_table().size(), std::vector<double>(s.sigma_table().size(), 1.0));
    return s.with_attenuation(std::move(ones));
}

struct SweepRow
{
    double      lambda_min = 0.0; // 1 marks the subspace-diffusion schedule
    int         t1         = 0;
    BoundReport report;
};

// turning_error at T_1 for each lambda_min, one derived stream per row
inline std::vector<SweepRow> lambda_sweep(const GaussianMixture& gm, const SubspaceCascade& c, ScheduleParams params,
                                          const std::vector<double>& lambdas, std::size_t n, std::uint64_t seed)
{
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        params.lambda_min   = lambdas[i];
        const DvdpProcess p = DvdpProcess::build(c, params);
        Rng               rng = derive_rng(seed, i);
        rows.push_back({lambdas[i], p.schedule.turning_point(1), turning_error(gm, p, 1, n, rng)});
    }
    return rows;
}

//
// For each first turning point: the attenuated schedule, then the same
// schedule in subspace mode. Both rows of a pair share one random stream.
//
inline std::vector<SweepRow> turning_point_comparison(const GaussianMixture& gm, const SubspaceCascade& c,
                                                      ScheduleParams params, const std::vector<int>& first_turns,
                                                      std::size_t n, std::uint64_t seed)
{
    if (c.levels() != 1)
        throw std::invalid_argument("turning point comparison: needs a cascade with one turning point");
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < first_turns.size(); ++i) {
        params.turning_points = {first_turns[i]};
        const DvdpProcess dvdp = DvdpProcess::build(c, params);
        const DvdpProcess sub(c, subspace_mode(dvdp.schedule));
        Rng               a = derive_rng(seed, i), b = derive_rng(seed, i);
        rows.push_back({params.lambda_min, first_turns[i], turning_error(gm, dvdp, 1, n, a)});
        rows.push_back({1.0, first_turns[i], turning_error(gm, sub, 1, n, b)});
    }
    return rows;
}

} // namespace dvdp

#endif // DVDP_VERIFY_HPP

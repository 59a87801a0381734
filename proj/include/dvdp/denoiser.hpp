// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_DENOISER_HPP
#define DVDP_DENOISER_HPP

#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mixture.hpp"
#include "process.hpp"

namespace dvdp {

//
// epsilon-prediction contract: maps x_t^k to an estimate of the standard
// normal noise in its forward marginal, with the shape of x_t^k.
//
template <class D>
concept Denoiser = requires(const D& d, const LatentState& x) {
    { d.evaluate(x) } -> std::same_as<Tensor>;
};

// denoisers that amortise work over many states sharing (level, time)
template <class D>
concept BatchDenoiser = Denoiser<D> && requires(const D& d, int k, int t, std::span<const Tensor> xs) {
    { d.evaluate_batch(k, t, xs) } -> std::same_as<std::vector<Tensor>>;
};

template <Denoiser D>
std::vector<Tensor> evaluate_batch(const D& d, int k, int t, std::span<const Tensor> xs)
{
    if constexpr (BatchDenoiser<D>) {
        return d.evaluate_batch(k, t, xs);
    } else {
        std::vector<Tensor> out;
        out.reserve(xs.size());
        for (const Tensor& x : xs)
            out.push_back(d.evaluate(LatentState{k, t, x}));
        return out;
    }
}

//
// Closed-form E[eps | x_t] for Gaussian-mixture data.
//
// Under component j the level-k data is x0 ~ N(m_j, C_j) and
// x_t = A x0 + sigma_bar eps with A = U diag(lambda pair) U^T, so x_t is
// Gaussian with covariance S_j = A C_j A + sigma_bar^2 I. Responsibilities come
// from these marginals, E[x0 | x_t, j] = m_j + C_j A S_j^{-1} (x_t - A m_j), and
// E[eps | x_t] = (x_t - A E[x0 | x_t]) / sigma_bar.
//
// Isotropic components keep C_j = c_j^2 I at every level (D_k is row
// orthonormal), so S_j is itself a diagonal pair and everything stays O(d).
// Other covariances need the explicit backend and go through dense algebra.
//
class AnalyticDenoiser
{
public:
    AnalyticDenoiser(const DvdpProcess& process, GaussianMixture gm) : process_(&process), mixture_(std::move(gm))
    {
        mixture_.validate();
        if (mixture_.shape() != process.cascade.shape(0))
            throw shape_error("analytic denoiser: mixture shape " + to_string(mixture_.shape()) +
                              " does not match the cascade base shape");
        isotropic_ = mixture_.is_isotropic();
        if (!isotropic_ && process.cascade.backend() != Backend::explicit_dense)
            throw std::invalid_argument("analytic denoiser: non-isotropic components need the explicit backend");

        for (int k = 0; k <= process.levels(); ++k) {
            std::vector<Tensor> means;
            for (const Tensor& m : mixture_.means)
                means.push_back(process.cascade.project_to_level(m, k));
            level_means_.push_back(std::move(means));
            if (!isotropic_) {
                const Eigen::MatrixXd        proj = process.cascade.dense_projection(k);
                std::vector<Eigen::MatrixXd> covs;
                for (const auto& v : mixture_.variances) {
                    const Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(v.data(), std::ptrdiff_t(v.size()));
                    covs.push_back(proj * diag.asDiagonal() * proj.transpose());
                }
                level_covs_.push_back(std::move(covs));
            }
        }
    }

    const GaussianMixture& mixture() const noexcept { return mixture_; }

    Tensor evaluate(const LatentState& x) const
    {
        check_state(*process_, x, "analytic denoiser");
        return evaluate_batch(x.level, x.time, std::span<const Tensor>(&x.data, 1)).front();
    }

    std::vector<Tensor> evaluate_batch(int k, int t, std::span<const Tensor> xs) const
    {
        const double sigma = process_->schedule.sigma_bar(t);
        if (sigma == 0.0)
            throw numeric_error("analytic denoiser: undefined at sigma_bar = 0 (t=0)");
        const DiagPair lam = process_->schedule.lambda_pair(k, t);

        std::vector<Tensor> out;
        out.reserve(xs.size());
        if (isotropic_) {
            for (const Tensor& x : xs) {
                const Tensor x0_mean = posterior_mean_isotropic(k, lam, sigma, x);
                Tensor       eps     = x - process_->cascade.apply_diag_pair(k, lam, x0_mean);
                out.push_back(scaled(eps, 1.0 / sigma));
            }
            return out;
        }

        const auto            comps = mixture_.components();
        const Eigen::MatrixXd a     = process_->cascade.dense_diag_pair(k, lam);
        std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;
        std::vector<double>                      logdet;
        for (std::size_t j = 0; j < comps; ++j) {
            const Eigen::MatrixXd& c = level_covs_[std::size_t(k)][j];
            Eigen::MatrixXd        s = a * c * a;
            s.diagonal().array() += sigma * sigma;
            chol.emplace_back(s);
            if (chol.back().info() != Eigen::Success)
                throw numeric_error("analytic denoiser: marginal covariance not positive definite");
            logdet.push_back(2.0 * chol.back().matrixL().toDenseMatrix().diagonal().array().log().sum());
        }
        for (const Tensor& x : xs) {
            const Eigen::VectorXd        xv = SubspaceCascade::as_vector(x);
            std::vector<double>          logp(comps);
            std::vector<Eigen::VectorXd> post(comps);
            for (std::size_t j = 0; j < comps; ++j) {
                const Eigen::VectorXd m = SubspaceCascade::as_vector(level_means_[std::size_t(k)][j]);
                const Eigen::VectorXd r = xv - a * m;
                const Eigen::VectorXd w = chol[j].solve(r);
                logp[j] = std::log(mixture_.weights[j]) -
                          0.5 * (r.dot(w) + logdet[j] + double(r.size()) * std::log(2.0 * std::numbers::pi));
                post[j] = m + level_covs_[std::size_t(k)][j] * (a * w);
            }
            const double    norm = log_sum_exp(logp);
            Eigen::VectorXd x0   = Eigen::VectorXd::Zero(xv.size());
            for (std::size_t j = 0; j < comps; ++j)
                x0 += std::exp(logp[j] - norm) * post[j];
            out.push_back(SubspaceCascade::from_vector((xv - a * x0) / sigma, x.shape));
        }
        return out;
    }

private:
    Tensor posterior_mean_isotropic(int k, DiagPair lam, double sigma, const Tensor& x) const
    {
        const SubspaceCascade& c      = process_->cascade;
        const bool             deepest = k == c.levels();
        const double           nb     = deepest ? 0.0 : double(c.dim(k + 1));
        const double           na     = double(c.dim(k)) - nb;
        const std::size_t      comps  = mixture_.components();

        std::vector<double> logp(comps);
        std::vector<Tensor> post(comps);
        for (std::size_t j = 0; j < comps; ++j) {
            const double cv  = mixture_.variances[j].front();
            const double s_a = cv * lam.a * lam.a + sigma * sigma;
            const double s_b = deepest ? s_a : cv * lam.b * lam.b + sigma * sigma;
            const Tensor& m  = level_means_[std::size_t(k)][j];
            const Tensor  r  = x - c.apply_diag_pair(k, lam, m);
            double        q  = 0.0;
            if (deepest) {
                q = squared_norm(r) / s_a;
            } else {
                const Tensor retained = c.project_retained(k, r);
                q = squared_norm(r - retained) / s_a + squared_norm(retained) / s_b;
            }
            logp[j] = std::log(mixture_.weights[j]) -
                      0.5 * (q + na * std::log(s_a) + nb * std::log(s_b) + double(x.size()) * std::log(2.0 * std::numbers::pi));
            post[j] = m + scaled(c.apply_diag_pair(k, lam.a / s_a, lam.b / s_b, r), cv);
        }
        const double norm = log_sum_exp(logp);
        Tensor       x0(x.shape);
        for (std::size_t j = 0; j < comps; ++j)
            axpy(std::exp(logp[j] - norm), post[j], x0);
        return x0;
    }

    const DvdpProcess*                        process_;
    GaussianMixture                           mixture_;
    bool                                      isotropic_ = true;
    std::vector<std::vector<Tensor>>          level_means_;
    std::vector<std::vector<Eigen::MatrixXd>> level_covs_;
};

//
// ||eps - eps_theta(x_t^k(x0, eps), t)||^2 with x0 a level-0 data point
//
template <Denoiser D>
double loss_term(const D& d, const DvdpProcess& p, const Tensor& x0, int k, int t, const Tensor& eps)
{
    const Tensor      x0k = p.cascade.project_to_level(x0, k);
    const LatentState xt  = marginal_sample(p, x0k, k, t, eps);
    const Tensor      hat = d.evaluate(xt);
    require_same_shape(hat, eps, "loss_term");
    return squared_norm(eps - hat);
}

} // namespace dvdp

#endif // DVDP_DENOISER_HPP

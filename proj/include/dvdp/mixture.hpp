// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_MIXTURE_HPP
#define DVDP_MIXTURE_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "tensor.hpp"

namespace dvdp {

// log(sum(exp(v)))
inline double log_sum_exp(std::span<const double> v)
{
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m))
        return m;
    double s = 0.0;
    for (double x : v)
        s += std::exp(x - m);
    return m + std::log(s);
}

//
// Weighted Gaussian components with diagonal covariances over level-0 tensors.
//
struct GaussianMixture
{
    std::vector<double>              weights;
    std::vector<Tensor>              means;
    std::vector<std::vector<double>> variances; // per component, per coordinate

    static GaussianMixture isotropic(std::vector<double> weights, std::vector<Tensor> means,
                                     const std::vector<double>& stddevs)
    {
        GaussianMixture gm;
        gm.weights = std::move(weights);
        gm.means   = std::move(means);
        if (stddevs.size() != gm.means.size())
            throw std::invalid_argument("mixture: one stddev per component required");
        for (std::size_t j = 0; j < gm.means.size(); ++j)
            gm.variances.emplace_back(gm.means[j].size(), stddevs[j] * stddevs[j]);
        gm.validate();
        return gm;
    }

    std::size_t components() const noexcept { return weights.size(); }
    TensorShape shape() const { return means.at(0).shape; }

    void validate() const
    {
        if (weights.empty() || means.size() != weights.size() || variances.size() != weights.size())
            throw std::invalid_argument("mixture: weights, means and variances must have one entry per component");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0))
                throw std::invalid_argument("mixture: negative weight");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw std::invalid_argument("mixture: weights must sum to 1");
        for (std::size_t j = 0; j < means.size(); ++j) {
            if (means[j].shape != means[0].shape)
                throw shape_error("mixture: component means differ in shape");
            if (variances[j].size() != means[j].size())
                throw shape_error("mixture: variance vector length mismatch");
            for (double v : variances[j])
                if (!(v > 0.0) || !std::isfinite(v))
                    throw std::invalid_argument("mixture: variances must be positive and finite");
        }
    }

    bool is_isotropic() const
    {
        for (const auto& v : variances)
            for (double x : v)
                if (x != v.front())
                    return false;
        return true;
    }

    Tensor mean() const
    {
        Tensor m(shape());
        for (std::size_t j = 0; j < components(); ++j)
            axpy(weights[j], means[j], m);
        return m;
    }

    // trace of the mixture covariance
    double covariance_trace() const
    {
        const Tensor mu    = mean();
        double       trace = 0.0;
        for (std::size_t j = 0; j < components(); ++j) {
            double within = 0.0;
            for (double v : variances[j])
                within += v;
            trace += weights[j] * (within + squared_norm(means[j] - mu));
        }
        return trace;
    }

    std::size_t sample_component(Rng& rng) const
    {
        std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
        return pick(rng);
    }

    Tensor sample(Rng& rng) const
    {
        const std::size_t j = sample_component(rng);
        Tensor            x = means[j];
        std::normal_distribution<double> n01(0.0, 1.0);
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] += std::sqrt(variances[j][i]) * n01(rng);
        return x;
    }

    double component_log_density(std::size_t j, const Tensor& x) const
    {
        require_same_shape(x, means[j], "mixture");
        double q = 0.0, logdet = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = x[i] - means[j][i];
            q += r * r / variances[j][i];
            logdet += std::log(variances[j][i]);
        }
        return -0.5 * (q + logdet + double(x.size()) * std::log(2.0 * std::numbers::pi));
    }

    double log_density(const Tensor& x) const
    {
        std::vector<double> terms(components());
        for (std::size_t j = 0; j < components(); ++j)
            terms[j] = std::log(weights[j]) + component_log_density(j, x);
        return log_sum_exp(terms);
    }

    std::vector<double> responsibilities(const Tensor& x) const
    {
        std::vector<double> terms(components());
        for (std::size_t j = 0; j < components(); ++j)
            terms[j] = std::log(weights[j]) + component_log_density(j, x);
        const double norm = log_sum_exp(terms);
        for (double& v : terms)
            v = std::exp(v - norm);
        return terms;
    }
};

} // namespace dvdp

#endif // DVDP_MIXTURE_HPP

// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_MLP_HPP
#define DVDP_MLP_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "denoiser.hpp"
#include "process.hpp"

namespace dvdp {

inline constexpr std::size_t time_embedding_dim = 16;

// [sin(t f_0), cos(t f_0), ..., sin(t f_7), cos(t f_7)] with f_i = 1000^{-i/8}
inline void time_embedding(int t, std::span<double, time_embedding_dim> out)
{
    for (std::size_t i = 0; i < time_embedding_dim / 2; ++i) {
        const double f = std::pow(1000.0, -double(i) / double(time_embedding_dim / 2));
        out[2 * i]     = std::sin(double(t) * f);
        out[2 * i + 1] = std::cos(double(t) * f);
    }
}

// one (level, time, x0, eps) draw of the training objective
struct TrainItem
{
    int    level = 0;
    int    time  = 1;
    Tensor x0; // already projected to `level`
    Tensor eps;
};

//
// Per-level two-layer perceptron predicting eps.
//
// For level k with d = d_bar_k and hidden width H:
//   u   = [c_in(t) x, emb(t)],  c_in = 1 / sqrt(sigma_bar_t^2 + 1)
//   h   = tanh(W1 u + b1)
//   eps = W2 h + b2 + s(t) x,   s = sigma_bar_t / (sigma_bar_t^2 + 1)
//
// s(t) x is a fixed skip term (the optimal predictor for standardised data);
// the trained layers only model the correction. All parameters live in one
// flat vector so optimisers and gradient checks can treat them uniformly.
//
class MlpDenoiser
{
public:
    struct Layout
    {
        std::size_t input = 0, hidden = 0, output = 0;
        std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, end = 0; // offsets into the flat vector
    };

    MlpDenoiser(const DvdpProcess& process, std::size_t hidden, std::uint64_t init_seed)
        : process_(&process), hidden_(hidden)
    {
        if (hidden == 0)
            throw std::invalid_argument("mlp: hidden width must be positive");
        std::size_t offset = 0;
        for (int k = 0; k <= process.levels(); ++k) {
            Layout l;
            l.output = process.cascade.dim(k);
            l.input  = l.output + time_embedding_dim;
            l.hidden = hidden;
            l.w1     = offset;
            l.b1     = l.w1 + l.hidden * l.input;
            l.w2     = l.b1 + l.hidden;
            l.b2     = l.w2 + l.output * l.hidden;
            l.end    = l.b2 + l.output;
            offset   = l.end;
            layouts_.push_back(l);
        }
        theta_.assign(offset, 0.0);
        Rng rng(init_seed);
        for (const Layout& l : layouts_) {
            const double s1 = 1.0 / std::sqrt(double(l.input));
            const double s2 = 1.0 / std::sqrt(double(l.hidden));
            for (std::size_t i = l.w1; i < l.b1; ++i)
                theta_[i] = s1 * standard_normal(rng);
            for (std::size_t i = l.w2; i < l.b2; ++i)
                theta_[i] = s2 * standard_normal(rng);
        }
    }

    const DvdpProcess&         process() const noexcept { return *process_; }
    std::size_t                hidden() const noexcept { return hidden_; }
    std::size_t                parameter_count() const noexcept { return theta_.size(); }
    const std::vector<double>& parameters() const noexcept { return theta_; }
    std::vector<double>&       parameters() noexcept { return theta_; }
    const Layout&              layout(int k) const { return layouts_.at(std::size_t(k)); }

    Tensor evaluate(const LatentState& x) const
    {
        check_state(*process_, x, "mlp");
        Scratch s;
        forward(x.level, x.time, x.data, s);
        return Tensor(x.data.shape, std::vector<double>(s.out.data(), s.out.data() + s.out.size()));
    }

    // ||eps - eps_hat||^2 for one item
    double item_loss(const TrainItem& item) const
    {
        const LatentState xt = marginal_sample(*process_, item.x0, item.level, item.time, item.eps);
        return squared_norm(item.eps - evaluate(xt));
    }

    //
    // Adds d(loss_scale * ||eps - eps_hat||^2)/d theta for one item to `grad`
    // and returns the unscaled squared error.
    //
    double accumulate_gradient(const TrainItem& item, std::span<double> grad, double loss_scale = 1.0) const
    {
        if (grad.size() != theta_.size())
            throw std::invalid_argument("mlp: gradient buffer has the wrong size");
        const LatentState xt = marginal_sample(*process_, item.x0, item.level, item.time, item.eps);
        Scratch           s;
        forward(item.level, item.time, xt.data, s);

        const Layout&   l = layouts_[std::size_t(item.level)];
        Eigen::VectorXd r = s.out - Eigen::Map<const Eigen::VectorXd>(item.eps.data.data(), Eigen::Index(l.output));
        const double    loss = r.squaredNorm();
        const Eigen::VectorXd g = 2.0 * loss_scale * r;

        Eigen::Map<Eigen::MatrixXd> dw2(grad.data() + l.w2, Eigen::Index(l.output), Eigen::Index(l.hidden));
        Eigen::Map<Eigen::VectorXd> db2(grad.data() + l.b2, Eigen::Index(l.output));
        Eigen::Map<Eigen::MatrixXd> dw1(grad.data() + l.w1, Eigen::Index(l.hidden), Eigen::Index(l.input));
        Eigen::Map<Eigen::VectorXd> db1(grad.data() + l.b1, Eigen::Index(l.hidden));

        dw2.noalias() += g * s.h.transpose();
        db2 += g;
        const Eigen::VectorXd dh = (w2(l).transpose() * g).cwiseProduct((1.0 - s.h.array().square()).matrix());
        dw1.noalias() += dh * s.u.transpose();
        db1 += dh;
        return loss;
    }

private:
    struct Scratch
    {
        Eigen::VectorXd u, h, out;
    };

    Eigen::Map<const Eigen::MatrixXd> w1(const Layout& l) const
    {
        return {theta_.data() + l.w1, Eigen::Index(l.hidden), Eigen::Index(l.input)};
    }
    Eigen::Map<const Eigen::MatrixXd> w2(const Layout& l) const
    {
        return {theta_.data() + l.w2, Eigen::Index(l.output), Eigen::Index(l.hidden)};
    }

    void forward(int k, int t, const Tensor& x, Scratch& s) const
    {
        const Layout& l     = layouts_.at(std::size_t(k));
        const double  sigma = process_->schedule.sigma_bar(t);
        const double  c_in  = 1.0 / std::sqrt(sigma * sigma + 1.0);
        const double  skip  = sigma / (sigma * sigma + 1.0);
        if (x.size() != l.output)
            throw shape_error("mlp: input size does not match level " + std::to_string(k));

        s.u.resize(Eigen::Index(l.input));
        for (std::size_t i = 0; i < l.output; ++i)
            s.u[Eigen::Index(i)] = c_in * x[i];
        time_embedding(t, std::span<double, time_embedding_dim>(s.u.data() + l.output, time_embedding_dim));

        const Eigen::Map<const Eigen::VectorXd> b1(theta_.data() + l.b1, Eigen::Index(l.hidden));
        const Eigen::Map<const Eigen::VectorXd> b2(theta_.data() + l.b2, Eigen::Index(l.output));
        s.h   = (w1(l) * s.u + b1).array().tanh().matrix();
        s.out = w2(l) * s.h + b2;
        for (std::size_t i = 0; i < l.output; ++i)
            s.out[Eigen::Index(i)] += skip * x[i];
    }

    const DvdpProcess*  process_;
    std::size_t         hidden_;
    std::vector<Layout> layouts_;
    std::vector<double> theta_;
};

//
// Adam with bias correction. A zero learning rate leaves the parameters
// untouched bit for bit.
//
class Adam
{
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
    {}

    void step(std::vector<double>& theta, std::span<const double> grad)
    {
        if (m_.empty()) {
            m_.assign(theta.size(), 0.0);
            v_.assign(theta.size(), 0.0);
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, double(t_));
        const double c2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            if (lr_ != 0.0)
                theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

    void set_lr(double lr) noexcept { lr_ = lr; }

private:
    double              lr_, beta1_, beta2_, eps_;
    long                t_ = 0;
    std::vector<double> m_, v_;
};

enum class LevelRule
{
    uniform_k, // pick a level, then a time inside its window
    uniform_t  // pick a time, the level follows
};

inline const char* to_string(LevelRule r) { return r == LevelRule::uniform_k ? "uniform-k" : "uniform-t"; }

struct TrainConfig
{
    int           iterations = 20000;
    int           batch      = 64;
    double        lr         = 1e-3;
    std::uint64_t seed       = 0;
    LevelRule     level_rule = LevelRule::uniform_k;

    void validate() const
    {
        if (iterations < 0 || batch < 1)
            throw std::invalid_argument("train: iterations must be >= 0 and batch >= 1");
        if (!(lr >= 0.0) || !std::isfinite(lr))
            throw std::invalid_argument("train: learning rate must be finite and non-negative");
    }
};

// draws level-0 training points
using DataSampler = std::function<Tensor(Rng&)>;

inline DataSampler mixture_sampler(GaussianMixture gm)
{
    gm.validate();
    return [gm = std::move(gm)](Rng& rng) { return gm.sample(rng); };
}

inline DataSampler dataset_sampler(std::vector<Tensor> rows)
{
    if (rows.empty())
        throw std::invalid_argument("train: empty dataset");
    return [rows = std::move(rows)](Rng& rng) {
        std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
        return rows[pick(rng)];
    };
}

// (level, time) under the chosen rule
inline std::pair<int, int> sample_level_time(const DvdpSchedule& s, LevelRule rule, Rng& rng)
{
    if (rule == LevelRule::uniform_t) {
        const int t = std::uniform_int_distribution<int>(1, s.steps())(rng);
        return {s.level_at(t), t};
    }
    const int k = std::uniform_int_distribution<int>(0, s.levels())(rng);
    return {k, std::uniform_int_distribution<int>(s.turning_point(k) + 1, s.turning_point(k + 1))(rng)};
}

inline TrainItem draw_item(const DvdpProcess& p, const DataSampler& data, LevelRule rule, Rng& rng)
{
    const auto [k, t] = sample_level_time(p.schedule, rule, rng);
    TrainItem item;
    item.level = k;
    item.time  = t;
    item.x0    = p.cascade.project_to_level(data(rng), k);
    item.eps   = normal_tensor(p.cascade.shape(k), rng);
    return item;
}

struct TrainResult
{
    std::vector<double> losses; // mean per-item loss of every iteration
};

//
// Minimises the mean of ||eps - eps_theta(x_t^k, t)||^2 over fresh draws.
// Gradients are summed in item order, so a run is reproducible bit for bit.
//
inline TrainResult train(MlpDenoiser& net, const DataSampler& data, const TrainConfig& cfg,
                         const std::function<void(int, double)>& progress = {})
{
    cfg.validate();
    const DvdpProcess&  p = net.process();
    Rng                 rng(cfg.seed);
    Adam                opt(cfg.lr);
    std::vector<double> grad(net.parameter_count());
    TrainResult         result;
    result.losses.reserve(std::size_t(cfg.iterations));

    for (int it = 0; it < cfg.iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double total = 0.0;
        for (int b = 0; b < cfg.batch; ++b)
            total += net.accumulate_gradient(draw_item(p, data, cfg.level_rule, rng), grad, 1.0 / cfg.batch);
        const double loss = total / cfg.batch;
        if (!(loss <= 1e6))
            throw numeric_error("train: loss diverged to " + std::to_string(loss) + " at iteration " +
                                std::to_string(it) + " (lower the learning rate)");
        opt.step(net.parameters(), grad);
        result.losses.push_back(loss);
        if (progress)
            progress(it, loss);
    }
    return result;
}

//
// Largest |g - g_fd| / max(|g| + |g_fd|, floor) over all parameters, where g
// is the backpropagated gradient of one item's loss and g_fd a central
// difference with step h.
//
inline double grad_check(const MlpDenoiser& net, const TrainItem& item, double h = 1e-5, double floor = 1e-6)
{
    std::vector<double> analytic(net.parameter_count(), 0.0);
    net.accumulate_gradient(item, analytic);

    MlpDenoiser         probe = net;
    double              worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double saved = probe.parameters()[i];
        probe.parameters()[i] = saved + h;
        const double up = probe.item_loss(item);
        probe.parameters()[i] = saved - h;
        const double down = probe.item_loss(item);
        probe.parameters()[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(std::abs(analytic[i]) + std::abs(fd), floor));
    }
    return worst;
}

// mean loss of a denoiser over a fixed list of items
template <Denoiser D>
double mean_loss(const D& d, const DvdpProcess& p, std::span<const TrainItem> items)
{
    double total = 0.0;
    for (const TrainItem& it : items) {
        const LatentState xt = marginal_sample(p, it.x0, it.level, it.time, it.eps);
        total += squared_norm(it.eps - d.evaluate(xt));
    }
    return total / double(items.size());
}

} // namespace dvdp

#endif // DVDP_MLP_HPP

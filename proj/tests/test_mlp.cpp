// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include <dvdp/mlp.hpp>

#include "test_util.hpp"

using namespace dvdp;

namespace {

DvdpProcess pair_process()
{
    return DvdpProcess::build(SubspaceCascade::build_flat(2, 1, 2), ScheduleParams{});
}

GaussianMixture two_blobs()
{
    return GaussianMixture::isotropic({0.3, 0.7}, {Tensor({1, 1, 2}, {0.6, 0.3}), Tensor({1, 1, 2}, {-0.4, -0.5})},
                                      {0.15, 0.25});
}

} // namespace

static_assert(Denoiser<MlpDenoiser>);

TEST(TimeEmbedding, KnownValues)
{
    std::array<double, time_embedding_dim> e{};
    time_embedding(0, e);
    for (std::size_t i = 0; i < e.size(); ++i)
        EXPECT_EQ(e[i], i % 2 == 0 ? 0.0 : 1.0);
    time_embedding(3, e);
    EXPECT_NEAR(e[0], std::sin(3.0), 1e-15);
    EXPECT_NEAR(e[15], std::cos(3.0 * std::pow(1000.0, -7.0 / 8.0)), 1e-15);
}

TEST(Mlp, LayoutAndShapes)
{
    const auto        c = SubspaceCascade::build({1, 4, 4}, 1, Backend::implicit_pooling);
    const DvdpProcess p = DvdpProcess::build(c, ScheduleParams{});
    const MlpDenoiser net(p, 8, 1);
    const std::size_t per0 = 8 * (16 + 16) + 8 + 16 * 8 + 16;
    const std::size_t per1 = 8 * (4 + 16) + 8 + 4 * 8 + 4;
    EXPECT_EQ(net.parameter_count(), per0 + per1);
    Rng rng(1);
    for (int k : {0, 1}) {
        const int    t   = k == 0 ? 100 : 900;
        const Tensor out = net.evaluate({k, t, normal_tensor(c.shape(k), rng)});
        EXPECT_EQ(out.shape, c.shape(k));
        EXPECT_TRUE(out.all_finite());
    }
    EXPECT_THROW(net.evaluate({0, 100, Tensor(c.shape(1))}), shape_error);
    EXPECT_THROW(MlpDenoiser(p, 0, 1), std::invalid_argument);
}

TEST(Mlp, GradientCheckRandomProbes)
{
    const DvdpProcess p = pair_process();
    const auto        data = mixture_sampler(two_blobs());
    Rng               rng(17);
    for (int probe = 0; probe < 20; ++probe) {
        const MlpDenoiser net(p, 12, std::uint64_t(probe));
        const TrainItem   item = draw_item(p, data, probe % 2 ? LevelRule::uniform_t : LevelRule::uniform_k, rng);
        EXPECT_LE(grad_check(net, item), 1e-4) << "probe " << probe;
    }
}

TEST(Mlp, BiasGradientsAtZeroParameters)
{
    const DvdpProcess p = pair_process();
    MlpDenoiser       net(p, 6, 0);
    std::fill(net.parameters().begin(), net.parameters().end(), 0.0);
    TrainItem item{0, 1, Tensor({1, 1, 2}), Tensor({1, 1, 2}, {0.7, -1.1})};
    std::vector<double> g(net.parameter_count(), 0.0);
    net.accumulate_gradient(item, g);

    MlpDenoiser::Layout l = net.layout(0);
    for (std::size_t i = l.b2; i < l.end; ++i) {
        const double saved = net.parameters()[i];
        net.parameters()[i] = saved + 1e-5;
        const double up     = net.item_loss(item);
        net.parameters()[i] = saved - 1e-5;
        const double down   = net.item_loss(item);
        net.parameters()[i] = saved;
        EXPECT_NEAR(g[i], (up - down) / 2e-5, 1e-8);
    }
    // hidden biases see no gradient while W2 is zero
    for (std::size_t i = l.b1; i < l.w2; ++i)
        EXPECT_EQ(g[i], 0.0);
}

TEST(Mlp, GradientScalesWithLoss)
{
    const DvdpProcess   p = pair_process();
    const MlpDenoiser   net(p, 10, 4);
    Rng                 rng(3);
    const TrainItem     item = draw_item(p, mixture_sampler(two_blobs()), LevelRule::uniform_k, rng);
    std::vector<double> g1(net.parameter_count(), 0.0), g2(net.parameter_count(), 0.0);
    net.accumulate_gradient(item, g1, 1.0);
    net.accumulate_gradient(item, g2, 2.0);
    for (std::size_t i = 0; i < g1.size(); ++i)
        EXPECT_NEAR(g2[i], 2.0 * g1[i], 1e-10);
}

TEST(Train, ZeroLearningRateKeepsParameters)
{
    const DvdpProcess p = pair_process();
    MlpDenoiser       net(p, 8, 5);
    const auto        before = net.parameters();
    TrainConfig       cfg;
    cfg.iterations = 50;
    cfg.batch      = 4;
    cfg.lr         = 0.0;
    train(net, mixture_sampler(two_blobs()), cfg);
    ASSERT_EQ(before.size(), net.parameters().size());
    EXPECT_EQ(std::memcmp(before.data(), net.parameters().data(), before.size() * sizeof(double)), 0);
}

TEST(Train, OverfitsSingleItem)
{
    const DvdpProcess p = pair_process();
    MlpDenoiser       net(p, 16, 6);
    const TrainItem   item{0, 40, Tensor({1, 1, 2}, {0.5, -0.2}), Tensor({1, 1, 2}, {1.3, 0.4})};
    Adam              opt(1e-2);
    std::vector<double> g(net.parameter_count());
    for (int i = 0; i < 2000; ++i) {
        std::fill(g.begin(), g.end(), 0.0);
        net.accumulate_gradient(item, g);
        opt.step(net.parameters(), g);
    }
    EXPECT_LT(net.item_loss(item), 1e-3);
}

TEST(Train, DivergenceIsReported)
{
    const DvdpProcess p = pair_process();
    MlpDenoiser       net(p, 8, 7);
    TrainConfig       cfg;
    cfg.iterations = 200;
    cfg.batch      = 2;
    cfg.lr         = 1e7;
    EXPECT_THROW(train(net, mixture_sampler(two_blobs()), cfg), numeric_error);
    cfg.lr = -1.0;
    EXPECT_THROW(train(net, mixture_sampler(two_blobs()), cfg), std::invalid_argument);
}

TEST(Train, ReproducibleAndSmoothedLossDecreases)
{
    const DvdpProcess p = pair_process();
    TrainConfig       cfg;
    cfg.iterations = 3000;
    cfg.batch      = 32;
    cfg.seed       = 8;
    MlpDenoiser a(p, 32, 1), b(p, 32, 1);
    const auto  ra = train(a, mixture_sampler(two_blobs()), cfg);
    train(b, mixture_sampler(two_blobs()), cfg);
    EXPECT_EQ(a.parameters(), b.parameters());

    auto window_mean = [&](std::size_t end) {
        return std::accumulate(ra.losses.begin() + std::ptrdiff_t(end - 500), ra.losses.begin() + std::ptrdiff_t(end), 0.0) /
               500.0;
    };
    EXPECT_LT(window_mean(3000), window_mean(500));
    EXPECT_LE(window_mean(3000), window_mean(1500) * 1.05);
}

TEST(Train, LevelRules)
{
    const DvdpProcess p = pair_process();
    Rng               rng(2);
    int               level0_k = 0, level0_t = 0;
    const int         n = 20000;
    for (int i = 0; i < n; ++i) {
        const auto [k, t] = sample_level_time(p.schedule, LevelRule::uniform_k, rng);
        EXPECT_TRUE(p.schedule.in_window(k, t));
        level0_k += k == 0;
        const auto [k2, t2] = sample_level_time(p.schedule, LevelRule::uniform_t, rng);
        EXPECT_TRUE(p.schedule.in_window(k2, t2));
        level0_t += k2 == 0;
    }
    EXPECT_NEAR(level0_k / double(n), 0.5, 4.0 * std::sqrt(0.25 / n));
    EXPECT_NEAR(level0_t / double(n), 0.6, 4.0 * std::sqrt(0.24 / n));
}

TEST(Train, DatasetSampler)
{
    const auto data = dataset_sampler({Tensor({1, 1, 2}, 1.0), Tensor({1, 1, 2}, 2.0)});
    Rng        rng(1);
    for (int i = 0; i < 10; ++i) {
        const double v = data(rng)[0];
        EXPECT_TRUE(v == 1.0 || v == 2.0);
    }
    EXPECT_THROW(dataset_sampler({}), std::invalid_argument);
}

// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include <dvdp/schedule.hpp>

using namespace dvdp;

namespace {

DvdpSchedule default_schedule()
{
    const auto c = SubspaceCascade::build({1, 32, 32}, 1, Backend::implicit_pooling);
    return DvdpSchedule::build(c, ScheduleParams{});
}

DvdpSchedule two_turn_schedule()
{
    const auto     c = SubspaceCascade::build({1, 8, 8}, 2, Backend::implicit_pooling);
    ScheduleParams p;
    p.turning_points = {300, 600};
    return DvdpSchedule::build(c, p);
}

} // namespace

TEST(Attenuation, HalfwayValue)
{
    const auto table = build_attenuation(1000, {600}, 0.01);
    EXPECT_NEAR(table[0][300], 0.1, 1e-14);
    EXPECT_EQ(table[0][0], 1.0);
    EXPECT_NEAR(table[0][600], 0.01, 1e-15);
    EXPECT_NEAR(table[0][1000], 0.01, 1e-15);
    for (int t = 0; t <= 1000; ++t)
        EXPECT_EQ(table[1][std::size_t(t)], 1.0);
}

TEST(Attenuation, MultiLevelShape)
{
    const auto table = build_attenuation(1000, {300, 600}, 0.01);
    ASSERT_EQ(table.size(), 3u);
    EXPECT_EQ(table[1][300], 1.0);
    EXPECT_NEAR(table[1][450], 0.1, 1e-14);
    EXPECT_NEAR(table[1][800], 0.01, 1e-15);
    for (std::size_t k = 0; k < table.size(); ++k)
        for (std::size_t t = 1; t < table[k].size(); ++t)
            EXPECT_LE(table[k][t], table[k][t - 1]);
}

TEST(Attenuation, RejectsBadInput)
{
    EXPECT_THROW(build_attenuation(1000, {600, 300}, 0.01), std::invalid_argument);
    EXPECT_THROW(build_attenuation(1000, {0}, 0.01), std::invalid_argument);
    EXPECT_THROW(build_attenuation(1000, {1000}, 0.01), std::invalid_argument);
    EXPECT_THROW(build_attenuation(1000, {600}, 1.0), std::invalid_argument);
    EXPECT_THROW(build_attenuation(1000, {600}, 0.0), std::invalid_argument);
}

TEST(Noise, FirstStepAndStart)
{
    const auto sigma = build_noise(1000, {}, {}, 1e-4, 0.02);
    EXPECT_EQ(sigma[0], 0.0);
    EXPECT_NEAR(sigma[1] / std::sqrt(1.0 / 0.9999 - 1.0), 1.0, 1e-12);
    EXPECT_NEAR(sigma[1], 1.00005e-2, 1e-8);
}

// independent recomputation with a plain cumulative product
TEST(Noise, MatchesCumulativeProductOracle)
{
    const int           steps = 1000;
    std::vector<double> oracle(steps + 1, 0.0);
    double              alpha_bar = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double beta = 1e-4 + (0.02 - 1e-4) * double(t - 1) / double(steps - 1);
        alpha_bar *= 1.0 - beta;
        oracle[std::size_t(t)] = std::sqrt(1.0 / alpha_bar - 1.0);
    }
    const auto plain = build_noise(steps, {}, {}, 1e-4, 0.02);
    for (int t = 1; t <= steps; ++t)
        EXPECT_NEAR(plain[std::size_t(t)] / oracle[std::size_t(t)], 1.0, 1e-9) << t;

    // adaptation with factor 4 at 600
    const auto adapted = build_noise(steps, {600}, {4}, 1e-4, 0.02);
    for (int t = 0; t < 600; ++t)
        EXPECT_EQ(adapted[std::size_t(t)], plain[std::size_t(t)]);
    for (int t = 600; t <= steps; ++t) {
        const double want = oracle[599] + 4.0 * (oracle[std::size_t(t)] - oracle[599]);
        EXPECT_NEAR(adapted[std::size_t(t)] / want, 1.0, 1e-9) << t;
    }
}

TEST(Noise, AdaptationIsContinuousAndIncreasing)
{
    const DvdpSchedule s = two_turn_schedule();
    for (int t = 2; t <= s.steps(); ++t)
        EXPECT_GT(s.sigma_bar(t), s.sigma_bar(t - 1));
    // the jump at a turning point is one rescaled step, nothing more
    for (int k = 1; k <= 2; ++k) {
        const int tk = s.turning_point(k);
        EXPECT_LT(s.sigma_bar(tk) - s.sigma_bar(tk - 1), 16.0 * (s.sigma_bar(tk + 1) - s.sigma_bar(tk)));
    }
}

TEST(Noise, RejectsBadBetas)
{
    EXPECT_THROW(build_noise(1000, {}, {}, 0.02, 1e-4), std::invalid_argument);
    EXPECT_THROW(build_noise(1000, {}, {}, 0.0, 0.02), std::invalid_argument);
    EXPECT_THROW(build_noise(1000, {}, {}, 1e-4, 1.0), std::invalid_argument);
}

TEST(StepCoeffs, ConstantRatioInsideWindow)
{
    const DvdpSchedule s     = default_schedule();
    const double       ratio = std::pow(0.01, 1.0 / 600.0);
    EXPECT_NEAR(ratio, 0.992354, 1e-6);
    for (int t : {1, 2, 100, 599, 600})
        EXPECT_NEAR(s.step_coeffs(0, t).lambda.a, ratio, 1e-12);
    const StepCoeffs deep = s.step_coeffs(1, 700);
    EXPECT_EQ(deep.lambda.a, 1.0);
    EXPECT_EQ(deep.lambda.b, 1.0);
    EXPECT_NEAR(deep.noise_var.a, s.sigma_bar(700) * s.sigma_bar(700) - s.sigma_bar(699) * s.sigma_bar(699), 1e-9);
}

TEST(StepCoeffs, FirstStepEqualsMarginal)
{
    const DvdpSchedule s = default_schedule();
    const StepCoeffs   c = s.step_coeffs(0, 1);
    EXPECT_EQ(c.lambda.a, s.lambda_bar(0, 1));
    EXPECT_EQ(c.noise_std.a, s.sigma_bar(1));
    EXPECT_EQ(c.noise_std.b, s.sigma_bar(1));
}

TEST(StepCoeffs, WindowChecks)
{
    const DvdpSchedule s = default_schedule();
    EXPECT_THROW(s.step_coeffs(0, 601), std::out_of_range);
    EXPECT_THROW(s.step_coeffs(1, 600), std::out_of_range);
    EXPECT_THROW(s.step_coeffs(0, 0), std::out_of_range);
    EXPECT_THROW(s.lambda_pair(0, 700), std::out_of_range);
    EXPECT_NO_THROW(s.lambda_pair(0, 600));
}

class Telescoping : public ::testing::TestWithParam<int>
{};

TEST_P(Telescoping, ProductsAndVariancesCompose)
{
    const DvdpSchedule s = GetParam() == 1 ? default_schedule() : two_turn_schedule();
    for (int k = 0; k <= s.levels(); ++k) {
        // run the one-step recursion from t=0 for every t the level can describe
        double lam = 1.0, var = 0.0;
        for (int t = 1; t <= s.turning_point(k + 1); ++t) {
            const int owner = std::max(k, s.level_at(t));
            // steps before the level's own window come from the shallower coefficients
            const double step_lam = s.lambda_bar(k, t) / s.lambda_bar(k, t - 1);
            const double l2       = s.sigma_bar(t) * s.sigma_bar(t) - step_lam * step_lam * s.sigma_bar(t - 1) * s.sigma_bar(t - 1);
            ASSERT_GE(l2, 0.0) << "k=" << k << " t=" << t;
            lam *= step_lam;
            var = step_lam * step_lam * var + l2;
            EXPECT_NEAR(lam / s.lambda_bar(k, t), 1.0, 1e-10);
            EXPECT_NEAR(std::sqrt(var) / s.sigma_bar(t), 1.0, 1e-10);
            if (owner == k && t > s.turning_point(k)) {
                const StepCoeffs c = s.step_coeffs(k, t);
                EXPECT_NEAR(c.lambda.a, step_lam, 1e-15);
                EXPECT_NEAR(c.noise_var.a, l2, 1e-12 * std::max(1.0, l2));
            }
        }
    }
}

INSTANTIATE_TEST_SUITE_P(Schedules, Telescoping, ::testing::Values(1, 2));

TEST(Schedule, Bookkeeping)
{
    const DvdpSchedule s = two_turn_schedule();
    EXPECT_EQ(s.turning_point(0), 0);
    EXPECT_EQ(s.turning_point(3), 1000);
    EXPECT_EQ(s.level_at(0), 0);
    EXPECT_EQ(s.level_at(300), 0);
    EXPECT_EQ(s.level_at(301), 1);
    EXPECT_EQ(s.level_at(1000), 2);
    EXPECT_TRUE(s.in_window(1, 600));
    EXPECT_FALSE(s.in_window(1, 300));
    EXPECT_NE(s.hash(), default_schedule().hash());
    EXPECT_EQ(s.hash(), two_turn_schedule().hash());
}

TEST(Schedule, TerminalNoiseScale)
{
    const auto     c = SubspaceCascade::build({1, 4, 4}, 0, Backend::implicit_pooling);
    ScheduleParams p;
    p.turning_points.clear();
    const DvdpSchedule s = DvdpSchedule::build(c, p);
    EXPECT_NEAR(s.sigma_bar(1000), 157.4, 1.0);
}

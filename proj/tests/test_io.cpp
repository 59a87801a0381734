// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include <dvdp/io.hpp>

#include "test_util.hpp"

using namespace dvdp;
using testing_util::read_bytes;
using testing_util::TempDir;

namespace {

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i]))
            return false;
    return true;
}

std::string le_u64(std::uint64_t v)
{
    std::string s;
    for (int i = 0; i < 8; ++i)
        s.push_back(char((v >> (8 * i)) & 0xff));
    return s;
}

DvdpProcess pair_process() { return DvdpProcess::build(SubspaceCascade::build_flat(2, 1, 2), ScheduleParams{}); }

} // namespace

TEST(TensorFile, GoldenBytes)
{
    TempDir    dir("io");
    const auto path = dir.path / "x.dvtf";
    write_tensor(path, Tensor({1, 1, 2}, {1.0, -2.0}));
    std::string expected = "DVTF";
    expected += std::string("\x01\x00", 2);         // version
    expected += std::string("\x00\x03", 2);         // dtype f64, three axes
    expected += le_u64(1) + le_u64(1) + le_u64(2);  // shape
    expected += le_u64(0x3ff0000000000000ULL);      // 1.0
    expected += le_u64(0xc000000000000000ULL);      // -2.0
    EXPECT_EQ(read_bytes(path), expected);
}

TEST(TensorFile, RoundTripIsBitExact)
{
    TempDir dir("io");
    Rng     rng(1);
    for (const TensorShape shape : {TensorShape{1, 1, 1}, TensorShape{3, 4, 5}, TensorShape{1, 8, 8}}) {
        Tensor x = scaled(normal_tensor(shape, rng), 1e3);
        x[0]     = -0.0;
        if (x.size() > 4) {
            x[1] = std::numeric_limits<double>::denorm_min();
            x[2] = std::numeric_limits<double>::infinity();
            x[3] = std::numeric_limits<double>::max();
            x[4] = std::numeric_limits<double>::quiet_NaN();
        }
        write_tensor(dir.path / "x.dvtf", x);
        const Tensor y = read_tensor(dir.path / "x.dvtf");
        EXPECT_EQ(y.shape, x.shape);
        EXPECT_TRUE(bitwise_equal(x.data, y.data));
    }
}

TEST(TensorFile, SinglePrecision)
{
    TempDir      dir("io");
    const Tensor exact({1, 1, 3}, {0.5, -1.25, 1024.0});
    write_tensor(dir.path / "f.dvtf", exact, Dtype::f32);
    EXPECT_EQ(read_tensor(dir.path / "f.dvtf"), exact);
    EXPECT_EQ(read_bytes(dir.path / "f.dvtf").size(), 4u + 2 + 2 + 3 * 8 + 3 * 4);

    write_tensor(dir.path / "g.dvtf", Tensor({1, 1, 1}, 0.1), Dtype::f32);
    EXPECT_EQ(read_tensor(dir.path / "g.dvtf")[0], double(0.1f));
}

TEST(TensorFile, LowerRankRecordsGainLeadingAxes)
{
    std::stringstream buf;
    write_record(buf, {{2, 3}, {1, 2, 3, 4, 5, 6}});
    const Tensor x = to_tensor(read_record(buf));
    EXPECT_EQ(x.shape, (TensorShape{1, 2, 3}));
    EXPECT_THROW(to_tensor({{1, 1, 1, 2}, {1, 2}}), io_error);
    EXPECT_THROW(write_record(buf, {{2, 2}, {1, 2, 3}}), io_error);
}

TEST(TensorFile, RejectsCorruptInput)
{
    std::stringstream good;
    write_record(good, to_record(Tensor({1, 1, 2}, 3.0)));
    const std::string bytes = good.str();

    auto parse = [](std::string s) {
        std::stringstream in(std::move(s));
        return read_record(in);
    };
    EXPECT_NO_THROW(parse(bytes));
    std::string bad = bytes;
    bad[0]          = 'X';
    EXPECT_THROW(parse(bad), io_error);
    bad    = bytes;
    bad[4] = 2; // version
    EXPECT_THROW(parse(bad), io_error);
    bad    = bytes;
    bad[6] = 7; // dtype
    EXPECT_THROW(parse(bad), io_error);
    EXPECT_THROW(parse(bytes.substr(0, bytes.size() - 1)), io_error);
    EXPECT_THROW(read_tensor("/nonexistent/dir/x.dvtf"), io_error);
}

TEST(Checkpoint, RoundTrip)
{
    TempDir    dir("io");
    Checkpoint ck;
    ck.metadata = {{"name", "demo"}, {"hash", 0xfedcba9876543210ULL}};
    ck.entries  = {{"a", {{2}, {1.5, -2.5}}}, {"bias.long_name", {{1, 3}, {0.0, 1e-300, 7.0}, Dtype::f64}}};
    save_checkpoint(dir.path / "c.dvck", ck);
    const Checkpoint back = load_checkpoint(dir.path / "c.dvck");
    EXPECT_EQ(back.metadata, ck.metadata);
    EXPECT_EQ(back.entries, ck.entries);

    const std::string bytes = read_bytes(dir.path / "c.dvck");
    EXPECT_EQ(bytes.substr(0, 4), "DVCK");
    std::ofstream(dir.path / "short.dvck", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    EXPECT_THROW(load_checkpoint(dir.path / "short.dvck"), io_error);
}

TEST(Checkpoint, MlpParametersSurviveAndMismatchIsRefused)
{
    TempDir           dir("io");
    const DvdpProcess p = pair_process();
    const MlpDenoiser net(p, 5, 3);
    save_checkpoint(dir.path / "m.dvck", mlp_checkpoint(net));
    const Checkpoint ck = load_checkpoint(dir.path / "m.dvck");
    EXPECT_EQ(ck.entries.size(), 8u);
    EXPECT_EQ(ck.entries[0].first, "level0.w1");
    EXPECT_EQ(ck.entries[0].second.shape, (std::vector<std::uint64_t>{5, 18}));

    MlpDenoiser other(p, 5, 99);
    ASSERT_NE(other.parameters(), net.parameters());
    load_mlp_parameters(other, ck);
    EXPECT_TRUE(bitwise_equal(other.parameters(), net.parameters()));

    const DvdpProcess shifted = DvdpProcess::build(SubspaceCascade::build_flat(2, 1, 2), ScheduleParams{.lambda_min = 0.1});
    MlpDenoiser       wrong_schedule(shifted, 5, 0);
    EXPECT_THROW(load_mlp_parameters(wrong_schedule, ck), io_error);
    MlpDenoiser wrong_width(p, 6, 0);
    EXPECT_THROW(load_mlp_parameters(wrong_width, ck), io_error);
}

TEST(Pgm, AffineRescaleAndLayout)
{
    TempDir dir("io");
    write_pgm(dir.path / "a.pgm", Tensor({2, 1, 3}, {-1.0, 0.0, 1.0, 0.5, 0.25, -1.0}));
    EXPECT_EQ(read_bytes(dir.path / "a.pgm"), "P2\n3 2\n255\n0 128 255\n191 159 0\n");
    write_pgm(dir.path / "flat.pgm", Tensor({1, 1, 2}, 4.0));
    EXPECT_EQ(read_bytes(dir.path / "flat.pgm"), "P2\n2 1\n255\n0 0\n");
}

TEST(Csv, NumbersRoundTrip)
{
    EXPECT_EQ(format_number(0.01), "0.01");
    EXPECT_EQ(format_number(600.0), "600");
    EXPECT_EQ(format_number(0.1 + 0.2), "0.30000000000000004");
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const double      v    = standard_normal(rng) * std::pow(10.0, double(i % 40 - 20));
        const std::string text = format_number(v);
        double            back = 0.0;
        std::from_chars(text.data(), text.data() + text.size(), back);
        EXPECT_EQ(back, v) << text;
        EXPECT_EQ(text.find(','), std::string::npos);
    }
}

TEST(Csv, WriterChecksRowWidth)
{
    std::ostringstream os;
    CsvWriter          csv(os, {"a", "b"});
    csv.row({"1", "2"});
    EXPECT_THROW(csv.row({"1"}), io_error);
    EXPECT_EQ(os.str(), "a,b\n1,2\n");
}

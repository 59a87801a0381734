// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_CONFIG_HPP
#define DVDP_CONFIG_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cascade.hpp"
#include "mixture.hpp"
#include "mlp.hpp"
#include "sampler.hpp"
#include "schedule.hpp"

namespace dvdp {

class config_error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct CascadeSection
{
    TensorShape base_shape{1, 2, 2};
    int         levels  = 1;
    Backend     backend = Backend::explicit_dense;
};

//
// Either an isotropic Gaussian mixture or a dataset tensor file of shape
// [N, C, H, W] or [N, C*H*W]. A mean with m values, m dividing the
// dimension, is repeated cyclically over the flattened tensor.
//
struct DataSection
{
    std::vector<double>              weights   = {0.5, 0.5};
    std::vector<std::vector<double>> means     = {{0.5, -0.3, 0.2, 0.1}, {-0.4, 0.4, -0.1, 0.3}};
    std::vector<double>              variances = {0.01, 0.01};
    std::string                      dataset;
};

struct TrainSection
{
    TrainConfig   train;
    std::size_t   hidden    = 64;
    std::uint64_t init_seed = 1;
};

struct SampleSection
{
    SamplerConfig sampler;
    std::size_t   count = 4;
    std::string   checkpoint; // empty: analytic denoiser for the [data] mixture
};

struct ForwardSection
{
    std::string      input;
    std::vector<int> times; // empty: 0, every turning point, T
    std::uint64_t    seed = 0;
};

struct VerifySection
{
    std::vector<double> lambda_sweep = {0.3, 0.1, 0.03, 0.01};
    std::vector<int>    compare;      // first turning points for the subspace comparison; empty skips it
    std::size_t         samples = 1000000;
    std::uint64_t       seed    = 0;
};

struct RunConfig
{
    CascadeSection cascade;
    ScheduleParams schedule;
    DataSection    data;
    TrainSection   train;
    SampleSection  sample;
    ForwardSection forward;
    VerifySection  verify;

    // --seed: one value for every stochastic stage
    void override_seed(std::uint64_t seed)
    {
        train.train.seed   = seed;
        sample.sampler.seed = seed;
        forward.seed       = seed;
        verify.seed        = seed;
    }
};

namespace config_detail {

inline std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> parts;
    std::size_t                   start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        parts.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos)
            return parts;
        start = pos + 1;
    }
}

template <class T>
T number(std::string_view s)
{
    T value{};
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty())
        throw std::invalid_argument("not a number: \"" + std::string(s) + "\"");
    return value;
}

template <class T>
std::vector<T> number_list(std::string_view s, char sep = ',')
{
    std::vector<T> out;
    if (trim(s).empty())
        return out;
    for (std::string_view part : split(s, sep))
        out.push_back(number<T>(part));
    return out;
}

inline bool boolean(std::string_view s)
{
    if (s == "true" || s == "1" || s == "yes")
        return true;
    if (s == "false" || s == "0" || s == "no")
        return false;
    throw std::invalid_argument("expected true or false, got \"" + std::string(s) + "\"");
}

inline TensorShape shape(std::string_view s)
{
    const auto dims = split(s, 'x');
    if (dims.size() != 3)
        throw std::invalid_argument("expected CxHxW, got \"" + std::string(s) + "\"");
    return {number<std::size_t>(dims[0]), number<std::size_t>(dims[1]), number<std::size_t>(dims[2])};
}

// components separated by '|', coordinates by spaces or commas
inline std::vector<std::vector<double>> means(std::string_view s)
{
    std::vector<std::vector<double>> out;
    for (std::string_view component : split(s, '|')) {
        std::string flat(component);
        std::replace(flat.begin(), flat.end(), ',', ' ');
        std::istringstream  in(flat);
        std::vector<double> values;
        for (std::string tok; in >> tok;)
            values.push_back(number<double>(tok));
        if (values.empty())
            throw std::invalid_argument("empty mixture component");
        out.push_back(std::move(values));
    }
    return out;
}

} // namespace config_detail

//
// Cross-key checks that the per-key parsers cannot make. Each error names
// the key to fix.
//
inline void validate_config(const RunConfig& cfg)
{
    auto fail = [](const char* section, const char* key, const std::string& why) {
        throw config_error(std::string("config: \"") + key + "\" in [" + section + "] " + why);
    };
    const TensorShape& bs = cfg.cascade.base_shape;
    if (bs.size() == 0)
        fail("cascade", "base_shape", "must have positive extents");
    if (cfg.cascade.levels < 0)
        fail("cascade", "K", "must be non-negative");
    if (cfg.cascade.levels > 0 && (bs.height % (std::size_t(1) << cfg.cascade.levels) != 0 ||
                                   bs.width % (std::size_t(1) << cfg.cascade.levels) != 0))
        fail("cascade", "base_shape", "must have height and width divisible by 2^K");

    const ScheduleParams& sp = cfg.schedule;
    if (sp.steps < 1)
        fail("schedule", "T", "must be positive");
    if (int(sp.turning_points.size()) != cfg.cascade.levels)
        fail("schedule", "turning_points", "must list exactly K values");
    for (std::size_t i = 0; i < sp.turning_points.size(); ++i)
        if (sp.turning_points[i] < 1 || sp.turning_points[i] >= sp.steps ||
            (i > 0 && sp.turning_points[i] <= sp.turning_points[i - 1]))
            fail("schedule", "turning_points", "must be strictly increasing inside (0, T)");
    if (!(sp.lambda_min > 0.0 && sp.lambda_min <= 1.0))
        fail("schedule", "lambda_min", "must lie in (0, 1]");
    if (!(sp.beta_lo > 0.0 && sp.beta_lo < 1.0))
        fail("schedule", "beta_lo", "must lie in (0, 1)");
    if (!(sp.beta_hi >= sp.beta_lo && sp.beta_hi < 1.0))
        fail("schedule", "beta_hi", "must lie in [beta_lo, 1)");

    const TrainConfig& tc = cfg.train.train;
    if (tc.iterations < 0)
        fail("train", "iterations", "must be non-negative");
    if (tc.batch < 1)
        fail("train", "batch", "must be at least 1");
    if (!(tc.lr >= 0.0) || !std::isfinite(tc.lr))
        fail("train", "lr", "must be finite and non-negative");
    if (cfg.train.hidden == 0)
        fail("train", "hidden", "must be positive");

    const SamplerConfig& sc = cfg.sample.sampler;
    if (sc.ddim_steps < 1 || sc.ddim_steps > sp.steps)
        fail("sample", "ddim_steps", "must lie in [1, T]");
    if (sc.eta_window && (sc.eta_window->start < 0 || sc.eta_window->end > sp.steps))
        fail("sample", "eta_window", "must lie inside [0, T]");
    if (cfg.sample.count == 0)
        fail("sample", "count", "must be at least 1");

    for (int t : cfg.forward.times)
        if (t < 0 || t > sp.steps)
            fail("forward", "checkpoints", "must lie inside [0, T]");

    for (double l : cfg.verify.lambda_sweep)
        if (!(l > 0.0 && l <= 1.0))
            fail("verify", "lambda_sweep", "values must lie in (0, 1]");
    for (int t : cfg.verify.compare)
        if (t < 1 || t >= sp.steps)
            fail("verify", "compare", "turning points must lie inside (0, T)");
    if (cfg.verify.samples < 10000)
        fail("verify", "samples", "must be at least 10000");

    if (!(cfg.data.weights.size() == cfg.data.means.size() && cfg.data.means.size() == cfg.data.variances.size()))
        fail("data", "weights", "must have one entry per component, as must \"means\" and \"variances\"");
}

//
// INI text with sections [cascade], [schedule], [data], [train], [sample],
// [forward] and [verify]. Unknown sections and keys are errors; anything
// left out keeps its default.
//
inline RunConfig parse_config(std::istream& in)
{
    namespace pt = boost::property_tree;
    namespace cd = config_detail;
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    pt::ptree         tree;
    try {
        std::istringstream stream(text);
        pt::ini_parser::read_ini(stream, tree);
    } catch (const pt::ini_parser_error& e) {
        // quote the offending line so the key shows up in the message
        std::istringstream lines(text);
        std::string        line;
        for (unsigned long i = 0; i < e.line() && std::getline(lines, line); ++i) {
        }
        throw config_error("config: " + e.message() + " at line " + std::to_string(e.line()) + ": \"" +
                           std::string(cd::trim(line)) + "\"");
    }

    RunConfig  cfg;
    using Setter = std::function<void(std::string_view)>;
    const std::map<std::string, std::map<std::string, Setter>> keys = {
        {"cascade",
         {{"base_shape", [&](auto v) { cfg.cascade.base_shape = cd::shape(v); }},
          {"K", [&](auto v) { cfg.cascade.levels = cd::number<int>(v); }},
          {"backend", [&](auto v) {
               if (v == "implicit")
                   cfg.cascade.backend = Backend::implicit_pooling;
               else if (v == "explicit")
                   cfg.cascade.backend = Backend::explicit_dense;
               else
                   throw std::invalid_argument("expected implicit or explicit");
           }}}},
        {"schedule",
         {{"T", [&](auto v) { cfg.schedule.steps = cd::number<int>(v); }},
          {"turning_points", [&](auto v) { cfg.schedule.turning_points = cd::number_list<int>(v); }},
          {"lambda_min", [&](auto v) { cfg.schedule.lambda_min = cd::number<double>(v); }},
          {"beta_lo", [&](auto v) { cfg.schedule.beta_lo = cd::number<double>(v); }},
          {"beta_hi", [&](auto v) { cfg.schedule.beta_hi = cd::number<double>(v); }}}},
        {"data",
         {{"weights", [&](auto v) { cfg.data.weights = cd::number_list<double>(v); }},
          {"means", [&](auto v) { cfg.data.means = cd::means(v); }},
          {"variances", [&](auto v) { cfg.data.variances = cd::number_list<double>(v); }},
          {"dataset", [&](auto v) { cfg.data.dataset = std::string(v); }}}},
        {"train",
         {{"iterations", [&](auto v) { cfg.train.train.iterations = cd::number<int>(v); }},
          {"batch", [&](auto v) { cfg.train.train.batch = cd::number<int>(v); }},
          {"lr", [&](auto v) { cfg.train.train.lr = cd::number<double>(v); }},
          {"seed", [&](auto v) { cfg.train.train.seed = cd::number<std::uint64_t>(v); }},
          {"init_seed", [&](auto v) { cfg.train.init_seed = cd::number<std::uint64_t>(v); }},
          {"hidden", [&](auto v) { cfg.train.hidden = cd::number<std::size_t>(v); }},
          {"level_rule", [&](auto v) {
               if (v == "uniform-k")
                   cfg.train.train.level_rule = LevelRule::uniform_k;
               else if (v == "uniform-t")
                   cfg.train.train.level_rule = LevelRule::uniform_t;
               else
                   throw std::invalid_argument("expected uniform-k or uniform-t");
           }}}},
        {"sample",
         {{"mode", [&](auto v) {
               if (v == "ancestral")
                   cfg.sample.sampler.mode = SamplerMode::ancestral;
               else if (v == "ddim")
                   cfg.sample.sampler.mode = SamplerMode::ddim;
               else
                   throw std::invalid_argument("expected ancestral or ddim");
           }},
          {"ddim_steps", [&](auto v) { cfg.sample.sampler.ddim_steps = cd::number<int>(v); }},
          {"eta_window", [&](auto v) {
               if (v == "auto") {
                   cfg.sample.sampler.eta_auto = true;
                   cfg.sample.sampler.eta_window.reset();
                   return;
               }
               cfg.sample.sampler.eta_auto = false;
               if (v == "none") {
                   cfg.sample.sampler.eta_window.reset();
                   return;
               }
               const auto ends = cd::number_list<int>(v);
               if (ends.size() != 2 || ends[0] > ends[1])
                   throw std::invalid_argument("expected auto, none or start,end");
               cfg.sample.sampler.eta_window = EtaWindow{ends[0], ends[1]};
           }},
          {"literal_update", [&](auto v) { cfg.sample.sampler.literal_update = cd::boolean(v); }},
          {"seed", [&](auto v) { cfg.sample.sampler.seed = cd::number<std::uint64_t>(v); }},
          {"count", [&](auto v) { cfg.sample.count = cd::number<std::size_t>(v); }},
          {"checkpoint", [&](auto v) { cfg.sample.checkpoint = std::string(v); }}}},
        {"forward",
         {{"input", [&](auto v) { cfg.forward.input = std::string(v); }},
          {"checkpoints", [&](auto v) { cfg.forward.times = cd::number_list<int>(v); }},
          {"seed", [&](auto v) { cfg.forward.seed = cd::number<std::uint64_t>(v); }}}},
        {"verify",
         {{"lambda_sweep", [&](auto v) { cfg.verify.lambda_sweep = cd::number_list<double>(v); }},
          {"compare", [&](auto v) { cfg.verify.compare = cd::number_list<int>(v); }},
          {"samples", [&](auto v) { cfg.verify.samples = cd::number<std::size_t>(v); }},
          {"seed", [&](auto v) { cfg.verify.seed = cd::number<std::uint64_t>(v); }}}},
    };

    for (const auto& [section, body] : tree) {
        const auto known = keys.find(section);
        if (body.empty() && !body.data().empty())
            throw config_error("config: key \"" + section + "\" outside any section");
        if (known == keys.end())
            throw config_error("config: unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            const auto setter = known->second.find(key);
            if (setter == known->second.end())
                throw config_error("config: unknown key \"" + key + "\" in [" + section + "]");
            try {
                setter->second(cd::trim(value.data()));
            } catch (const std::invalid_argument& e) {
                throw config_error("config: bad value for \"" + key + "\" in [" + section + "]: " + e.what());
            } catch (const std::out_of_range&) {
                throw config_error("config: value out of range for \"" + key + "\" in [" + section + "]");
            }
        }
    }
    validate_config(cfg);
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw config_error("config: cannot open " + path.string());
    return parse_config(in);
}

// isotropic mixture over `shape` described by [data]
inline GaussianMixture make_mixture(const DataSection& d, TensorShape shape)
{
    const std::size_t n = d.weights.size();
    if (d.means.size() != n || d.variances.size() != n)
        throw config_error("config: \"weights\", \"means\" and \"variances\" in [data] need one entry per component");
    std::vector<Tensor> means;
    for (const auto& m : d.means) {
        if (shape.size() % m.size() != 0)
            throw config_error("config: \"means\" in [data] has " + std::to_string(m.size()) +
                               " values per component, which does not divide " + std::to_string(shape.size()));
        Tensor mean(shape);
        for (std::size_t i = 0; i < mean.size(); ++i)
            mean[i] = m[i % m.size()];
        means.push_back(std::move(mean));
    }
    std::vector<double> stds;
    for (double v : d.variances) {
        if (!(v > 0.0))
            throw config_error("config: \"variances\" in [data] must be positive");
        stds.push_back(std::sqrt(v));
    }
    try {
        return GaussianMixture::isotropic(d.weights, std::move(means), stds);
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("config: bad mixture in [data]: ") + e.what());
    }
}

} // namespace dvdp

#endif // DVDP_CONFIG_HPP

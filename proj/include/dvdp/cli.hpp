// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_CLI_HPP
#define DVDP_CLI_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "denoiser.hpp"
#include "io.hpp"
#include "mlp.hpp"
#include "process.hpp"
#include "sampler.hpp"
#include "verify.hpp"

namespace dvdp {

enum ExitCode : int
{
    exit_ok      = 0,
    exit_failure = 1, // I/O and anything unexpected
    exit_config  = 2,
    exit_numeric = 3,
};

struct CliContext
{
    RunConfig             config;
    std::filesystem::path out_dir; // empty: not given
    bool                  quiet = false;
    std::ostream*         out   = &std::cout;

    std::ostream& log() const
    {
        static std::ostream null(nullptr);
        return quiet ? null : *out;
    }

    std::filesystem::path output_dir() const
    {
        const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(".") : out_dir;
        std::filesystem::create_directories(dir);
        return dir;
    }
};

namespace cli {

// library argument checks on configured values are configuration errors
template <class F>
auto configured(F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("config: ") + e.what());
    } catch (const std::out_of_range& e) {
        throw config_error(std::string("config: ") + e.what());
    }
}

inline DvdpProcess make_process(const RunConfig& cfg)
{
    return configured([&] {
        const auto c = SubspaceCascade::build(cfg.cascade.base_shape, cfg.cascade.levels, cfg.cascade.backend);
        return DvdpProcess::build(c, cfg.schedule);
    });
}

inline void require_file(const std::string& path, const char* section, const char* key)
{
    if (path.empty())
        throw config_error(std::string("config: \"") + key + "\" in [" + section + "] is required");
    if (!std::filesystem::is_regular_file(path))
        throw config_error(std::string("config: \"") + key + "\" in [" + section + "] names a missing file: " + path);
}

// rows of a [N, ...] dataset tensor, each reshaped to the level-0 shape
inline std::vector<Tensor> load_dataset(const std::filesystem::path& path, TensorShape shape)
{
    require_file(path.string(), "data", "dataset");
    auto               is     = detail::open_in(path);
    const TensorRecord record = read_record(is);
    if (record.shape.size() < 2)
        throw config_error("config: dataset " + path.string() + " needs a leading sample axis");
    const std::size_t n = record.shape[0];
    if (n == 0 || record.values.size() != n * shape.size())
        throw config_error("config: dataset " + path.string() + " rows do not have shape " + to_string(shape));
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < n; ++i)
        rows.emplace_back(shape, std::vector<double>(record.values.begin() + std::ptrdiff_t(i * shape.size()),
                                                     record.values.begin() + std::ptrdiff_t((i + 1) * shape.size())));
    return rows;
}

inline std::string padded(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

inline void cmd_schedule(const CliContext& ctx)
{
    const DvdpProcess p = make_process(ctx.config);
    std::ofstream     file;
    std::ostream*     os = ctx.out;
    if (!ctx.out_dir.empty()) {
        file = detail::open_out(ctx.output_dir() / "schedule.csv");
        os   = &file;
    }
    std::vector<std::string> header = {"t", "sigma_bar"};
    for (int k = 0; k <= p.levels(); ++k)
        header.push_back("lambda_bar_" + std::to_string(k));
    CsvWriter csv(*os, header);
    for (int t = 0; t <= p.steps(); ++t) {
        std::vector<std::string> row = {std::to_string(t), format_number(p.schedule.sigma_bar(t))};
        for (int k = 0; k <= p.levels(); ++k)
            row.push_back(format_number(p.schedule.lambda_bar(k, t)));
        csv.row(row);
    }
    os->flush();
}

inline void cmd_forward(const CliContext& ctx)
{
    const RunConfig&  cfg = ctx.config;
    const DvdpProcess p   = make_process(cfg);
    require_file(cfg.forward.input, "forward", "input");
    auto               is     = detail::open_in(cfg.forward.input);
    const TensorRecord record = read_record(is);
    const Tensor       x0     = to_tensor(record);
    if (x0.shape != p.cascade.shape(0))
        throw config_error("config: forward input has shape " + to_string(x0.shape) + ", cascade expects " +
                           to_string(p.cascade.shape(0)));

    std::set<int> times(cfg.forward.times.begin(), cfg.forward.times.end());
    if (times.empty()) {
        times.insert({0, p.steps()});
        for (int tp : p.schedule.turning_points())
            times.insert(tp);
    }

    Rng         rng(cfg.forward.seed);
    const auto  states  = forward_trajectory(p, x0, rng);
    const auto  dir     = ctx.output_dir();
    std::size_t written = 0;
    for (const LatentState& s : states) {
        if (!times.contains(s.time))
            continue;
        const auto path = dir / ("forward_t" + std::to_string(s.time) + "_k" + std::to_string(s.level) + ".dvtf");
        write_tensor(path, s.data, record.dtype);
        ++written;
    }
    ctx.log() << "forward: wrote " << written << " states to " << dir.string() << '\n';
}

inline void cmd_sample(const CliContext& ctx)
{
    const RunConfig&  cfg = ctx.config;
    const DvdpProcess p   = make_process(cfg);
    configured([&] {
        resolve_eta_window(cfg.sample.sampler, p.schedule);
        if (cfg.sample.sampler.mode == SamplerMode::ddim)
            ddim_timesteps(p.schedule, cfg.sample.sampler.ddim_steps);
        return 0;
    });

    std::vector<Tensor> samples;
    if (cfg.sample.checkpoint.empty()) {
        if (!cfg.data.dataset.empty())
            throw config_error("config: sampling a dataset needs \"checkpoint\" in [sample]");
        const AnalyticDenoiser d = configured([&] { return AnalyticDenoiser(p, make_mixture(cfg.data, p.cascade.shape(0))); });
        samples = sample_batch(p, d, cfg.sample.sampler, cfg.sample.count);
    } else {
        require_file(cfg.sample.checkpoint, "sample", "checkpoint");
        const Checkpoint ck     = load_checkpoint(cfg.sample.checkpoint);
        const auto       hidden = ck.metadata.value("hidden", std::size_t(0));
        if (hidden == 0)
            throw config_error("config: \"checkpoint\" in [sample] is not a denoiser checkpoint");
        MlpDenoiser net(p, hidden, 0);
        try {
            load_mlp_parameters(net, ck);
        } catch (const io_error& e) {
            throw config_error(std::string("config: \"checkpoint\" in [sample] does not fit this config: ") + e.what());
        }
        samples = sample_batch(p, net, cfg.sample.sampler, cfg.sample.count);
    }

    const auto dir = ctx.output_dir();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        write_tensor(dir / ("sample_" + padded(i) + ".dvtf"), samples[i]);
        write_pgm(dir / ("sample_" + padded(i) + ".pgm"), samples[i]);
    }
    ctx.log() << "sample: " << samples.size() << ' ' << to_string(cfg.sample.sampler.mode) << " samples in "
              << dir.string() << '\n';
}

inline void cmd_train(const CliContext& ctx)
{
    const RunConfig&  cfg = ctx.config;
    const DvdpProcess p   = make_process(cfg);
    configured([&] {
        cfg.train.train.validate();
        return 0;
    });
    const DataSampler data = cfg.data.dataset.empty()
                                 ? mixture_sampler(configured([&] { return make_mixture(cfg.data, p.cascade.shape(0)); }))
                                 : dataset_sampler(load_dataset(cfg.data.dataset, p.cascade.shape(0)));
    MlpDenoiser net = configured([&] { return MlpDenoiser(p, cfg.train.hidden, cfg.train.init_seed); });

    const int   every  = std::max(1, cfg.train.train.iterations / 10);
    const auto  result = train(net, data, cfg.train.train, [&](int it, double loss) {
        if ((it + 1) % every == 0)
            ctx.log() << "train: iteration " << it + 1 << " loss " << loss << '\n';
    });

    const auto dir = ctx.output_dir();
    save_checkpoint(dir / "checkpoint.dvck", mlp_checkpoint(net));
    auto      os = detail::open_out(dir / "train_loss.csv");
    CsvWriter csv(os, {"iteration", "loss"});
    for (std::size_t i = 0; i < result.losses.size(); ++i)
        csv.row({std::to_string(i + 1), format_number(result.losses[i])});
    detail::finish(os, dir / "train_loss.csv");
    ctx.log() << "train: checkpoint written to " << (dir / "checkpoint.dvck").string() << '\n';
}

inline void cmd_verify(const CliContext& ctx)
{
    const RunConfig&  cfg = ctx.config;
    const DvdpProcess p   = make_process(cfg);
    if (p.cascade.backend() != Backend::explicit_dense)
        throw config_error("config: verify needs backend = explicit in [cascade]");
    if (p.levels() != 1)
        throw config_error("config: verify needs K = 1 in [cascade]");

    const double          radius = std::sqrt(double(p.cascade.dim(0)));
    const GaussianMixture gm     = clamp_to_ball(configured([&] { return make_mixture(cfg.data, p.cascade.shape(0)); }), radius);
    std::vector<SweepRow> rows   = configured([&] {
        return lambda_sweep(gm, p.cascade, cfg.schedule, cfg.verify.lambda_sweep, cfg.verify.samples, cfg.verify.seed);
    });
    if (!cfg.verify.compare.empty()) {
        auto more = configured([&] {
            return turning_point_comparison(gm, p.cascade, cfg.schedule, cfg.verify.compare, cfg.verify.samples,
                                            cfg.verify.seed + 1);
        });
        rows.insert(rows.end(), more.begin(), more.end());
    }

    const auto dir = ctx.output_dir();
    auto       os  = detail::open_out(dir / "verify.csv");
    CsvWriter  csv(os, {"lambda_min", "T1", "jsd", "stderr", "bound", "verdict"});
    for (const SweepRow& r : rows) {
        csv.row({format_number(r.lambda_min), std::to_string(r.t1), format_number(r.report.jsd),
                 format_number(r.report.std_error), format_number(r.report.bound), r.report.verdict ? "pass" : "fail"});
        char line[160];
        std::snprintf(line, sizeof line, "verify: lambda_min=%-6g T1=%-4d jsd=%.4e +- %.1e  bound=%.4e  %s\n",
                      r.lambda_min, r.t1, r.report.jsd, r.report.std_error, r.report.bound,
                      r.report.verdict ? "pass" : "FAIL");
        ctx.log() << line;
    }
    detail::finish(os, dir / "verify.csv");
}

} // namespace cli

//
// dvdp <schedule|forward|sample|train|verify> [--config PATH] [--out DIR]
//      [--seed N] [--quiet]
// Returns the process exit code; messages go to `out` and `err`.
//
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Dimensionality-varying diffusion toolkit", "dvdp"};
    app.require_subcommand(1);

    std::string                  config_path, out_dir;
    std::optional<std::uint64_t> seed;
    bool                         quiet = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "seed for every stochastic stage, overriding the config");
        sub->add_flag("--quiet", quiet, "suppress progress output");
    };
    using Command = void (*)(const CliContext&);
    const std::vector<std::tuple<const char*, const char*, Command>> commands = {
        {"schedule", "write the attenuation and noise tables as CSV", cli::cmd_schedule},
        {"forward", "run the forward process on a tensor file", cli::cmd_forward},
        {"sample", "draw samples with the analytic or a trained denoiser", cli::cmd_sample},
        {"train", "train the MLP denoiser", cli::cmd_train},
        {"verify", "turning-point JSD against its upper bound", cli::cmd_verify},
    };
    std::vector<CLI::App*> subs;
    for (const auto& [name, help, fn] : commands)
        add_common(subs.emplace_back(app.add_subcommand(name, help)));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "dvdp: " << e.what() << '\n';
        return exit_config;
    }

    try {
        CliContext ctx;
        ctx.config  = config_path.empty() ? RunConfig{} : load_config(config_path);
        ctx.out_dir = out_dir;
        ctx.quiet   = quiet;
        ctx.out     = &out;
        if (seed)
            ctx.config.override_seed(*seed);
        for (std::size_t i = 0; i < subs.size(); ++i)
            if (subs[i]->parsed())
                std::get<2>(commands[i])(ctx);
        return exit_ok;
    } catch (const config_error& e) {
        err << "dvdp: " << e.what() << '\n';
        return exit_config;
    } catch (const numeric_error& e) {
        err << "dvdp: numeric failure: " << e.what() << '\n';
        return exit_numeric;
    } catch (const std::exception& e) {
        err << "dvdp: " << e.what() << '\n';
        return exit_failure;
    }
}

} // namespace dvdp

#endif // DVDP_CLI_HPP

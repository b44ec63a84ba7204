#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fraclab/app.hpp"
#include "fraclab/plot.hpp"

int main(int argc, char** argv) {
    using fraclab::app::RunOptions;
    CLI::App cli{"fraclab: fractional diffusion and wave solvers, linearization and jet recovery"};
    cli.require_subcommand(1);

    RunOptions ro;
    std::string config, out;
    std::uint64_t seed = 0;
    double noise = 0.0;

    auto* run = cli.add_subcommand("run", "run the task named in a config file");
    run->add_option("--config", config, "config file (JSON or key = value lines)")->required();
    run->add_option("--out", out, "output directory");
    run->add_option("--seed", seed, "seed for random data and noise");
    run->add_option("--threads", ro.threads, "worker threads; never changes results")->check(CLI::PositiveNumber);
    run->add_option("--noise", noise, "standard deviation of additive DN noise (recover)")->check(CLI::NonNegativeNumber);

    std::vector<int> only;
    auto* ver = cli.add_subcommand("verify", "run the property suite");
    ver->add_option("--config", config, "optional verify config");
    ver->add_option("--out", out, "output directory");
    ver->add_option("--seed", seed, "seed for random problems");
    ver->add_option("--threads", ro.threads, "worker threads; never changes results")->check(CLI::PositiveNumber);
    ver->add_option("--only", only, "criterion ids to run")->delimiter(',');

    std::string plot_in, plot_out;
    auto* plt = cli.add_subcommand("plot", "render SVG plots from run artifacts");
    plt->add_option("--in", plot_in, "artifact directory")->required();
    plt->add_option("--out", plot_out, "plot directory (defaults to the artifact directory)");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? 0 : fraclab::app::exit_config;
    }

    auto fill = [&](CLI::App* sub) {
        ro.config = config;
        if (!out.empty()) ro.out = out;
        if (sub->count("--seed")) ro.seed = seed;
        if (sub == run && sub->count("--noise")) ro.noise = noise;
    };

    if (run->parsed()) {
        fill(run);
        return fraclab::app::run(ro);
    }
    if (ver->parsed()) {
        fill(ver);
        nlohmann::json cfg = {{"task", "verify"}};
        if (!config.empty()) {
            try {
                cfg = fraclab::io::load_config(config);
            } catch (const fraclab::ConfigError& e) {
                std::cerr << fraclab::app::detail::error_json("ConfigError", e.what(), "verify", 2).dump() << "\n";
                return fraclab::app::exit_config;
            }
            cfg["task"] = "verify";
        }
        if (!only.empty()) cfg["verify"]["only"] = only;
        return fraclab::app::run_config(cfg, ro);
    }
    const auto written = fraclab::plot::emit(plot_in, plot_out.empty() ? plot_in : plot_out, std::cerr);
    for (const auto& p : written) std::cout << p.string() << "\n";
    return 0;
}

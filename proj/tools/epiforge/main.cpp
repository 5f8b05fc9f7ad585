#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "epiforge/pipeline.hpp"

int main(int argc, char** argv) {
    const char* log_level = std::getenv("EPIFORGE_LOG");
    if (!epiforge::pipeline::configure_logging(log_level ? log_level : "")) {
        std::cerr << "EPIFORGE_LOG='" << log_level << "' is not one of error, warn, info, debug; using warn\n";
    }
    CLI::App app{"epiforge: county-level epidemic simulation, forecasting and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::size_t> jobs;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "JSON run config; omitted keys take their defaults");
    app.add_option("--jobs", jobs, "maximum worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "output directory");
    app.add_option("--seed", seed, "global seed");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "simulate one mixing-SEIR series as the observed data"},
        {"gen-corpus", "generate the training scenario corpus"},
        {"train-cleirnet", "train the CLEIR-Net ensemble"},
        {"train-tdefsi", "train the TDEFSI regularization arms"},
        {"forecast", "forecast the held-out horizon"},
        {"evaluate", "score forecasts against the held-out horizon"},
        {"dependency", "score counties by neighbour mutual information"},
        {"select", "write the county mask for the configured delta"},
        {"sweep-delta", "retrain on the counties kept at each delta"},
        {"report", "regenerate CSV reports from the metric JSON files"},
        {"run", "run every configured stage in order"},
        {"show-config", "print the config with defaults filled in"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        auto config = config_path.empty() ? epiforge::pipeline::RunConfig{}
                                          : epiforge::pipeline::parse_config(config_path);
        if (jobs) config.jobs = *jobs;
        if (out) config.out = *out;
        if (seed) config.seed = *seed;
        if (command == "show-config") {
            std::cout << epiforge::pipeline::config_json(config);
            return 0;
        }
        epiforge::pipeline::Pipeline pipeline(std::move(config));
        for (const auto& name : pipeline.run(command)) std::cout << pipeline.path(name) << '\n';
        return 0;
    } catch (const epiforge::pipeline::ConfigError& e) {
        std::cerr << epiforge::pipeline::diagnostic_json(e, command) << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << epiforge::pipeline::diagnostic_json(e, command) << '\n';
        return 1;
    }
}

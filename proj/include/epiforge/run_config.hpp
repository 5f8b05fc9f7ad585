#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "epiforge/cleirnet.hpp"
#include "epiforge/dependency.hpp"
#include "epiforge/seir.hpp"
#include "epiforge/tdefsi.hpp"

namespace epiforge::pipeline {

/// Every problem found while validating a config, reported together.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct DataConfig {
    std::string counties;   ///< feature CSV; empty means synthetic counties
    std::string cases;      ///< JHU-layout cumulative cases; empty means the simulated series
    std::string adjacency;  ///< fips pairs; empty means a k-nearest-neighbour graph
    std::size_t synthetic_counties = 20;
    std::size_t knn = 4;
    bool drop_aggregated_ny = true;
    std::string start_date = "2020-01-22";
};

struct SimulateConfig {
    std::size_t days = 150;
    double h = 0.25;
    seir::MixParams params{1e5, 1e3, 0.25, 0.1, 2e-5, 0.3};
    double sparsity_epsilon = 0.0;
};

struct CorpusConfig {
    std::size_t n_train = 32;
    std::size_t n_valid = 8;
    std::size_t days = 150;
    double h = 0.5;
    seir::ParameterRanges ranges;
    double sparsity_epsilon = 0.0;
};

struct CleirRunConfig {
    cleirnet::CleirConfig model;  ///< n_C, n_X and n_F are filled from the data and horizon
    std::size_t ensemble = 5;
    std::string train_on = "observed";  ///< observed | corpus
};

struct TdefsiRunConfig {
    tdefsi::TdefsiConfig model;  ///< K is filled from the corpus
    std::vector<std::string> arms{"none", "dropout", "dropout+nonneg", "dropout+nonneg+spatial"};
};

struct ForecastConfig {
    std::size_t horizon = 14;
    std::vector<std::string> models{"cleirnet", "tdefsi"};
    std::string tdefsi_arm = "dropout+nonneg+spatial";
};

struct SelectConfig {
    double delta = 0.2;
};

struct SweepConfig {
    std::vector<double> deltas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    std::size_t max_epochs = 40;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "epiforge-out";
    std::size_t jobs = 1;
    std::vector<std::string> stages{"simulate", "gen-corpus", "train-cleirnet", "train-tdefsi", "forecast",
                                    "evaluate", "dependency", "select", "sweep-delta", "report"};
    DataConfig data;
    SimulateConfig simulate;
    CorpusConfig corpus;
    CleirRunConfig cleirnet;
    TdefsiRunConfig tdefsi;
    ForecastConfig forecast;
    dependency::MiConfig dependency;
    SelectConfig select;
    SweepConfig sweep;

    RunConfig();
};

/// Subcommand names accepted by the pipeline, in stage order.
const std::vector<std::string>& subcommands();

/// Parses JSON text; unknown keys, wrong types and invalid values all land in one ConfigError.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);

/// Defaults-filled config as indented JSON with every key present.
std::string config_json(const RunConfig& config);

/// SHA-256 of the canonical config with `out` and `jobs` removed.
std::string config_hash(const RunConfig& config);

/// m/d/yy labels for `count` consecutive days starting `offset` days after an ISO date.
std::vector<std::string> date_labels(const std::string& start_iso, std::size_t offset, std::size_t count);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

}  // namespace epiforge::pipeline

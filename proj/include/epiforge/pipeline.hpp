#pragma once

#include <cstddef>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/error.hpp"
#include "epiforge/geo.hpp"
#include "epiforge/run_config.hpp"

namespace epiforge::pipeline {

/// A forecast file whose counties differ from the county table.
class CountyMismatchError : public DimensionError {
public:
    CountyMismatchError(const std::string& path, std::vector<std::string> missing, std::vector<std::string> unexpected);
    const std::vector<std::string>& missing() const noexcept { return missing_; }
    const std::vector<std::string>& unexpected() const noexcept { return unexpected_; }

private:
    std::vector<std::string> missing_;
    std::vector<std::string> unexpected_;
};

/// "epiforge <version> config=<first 16 hex of the hash> seed=<seed>"
std::string artifact_stamp(const RunConfig& config);

/// County table, case series, adjacency and features shared by the data-driven stages.
struct Observed {
    geo::CountyTable table;
    geo::CaseSeries series;
    geo::AdjacencyList adjacency;
    Eigen::MatrixXd features;  ///< n_X x counties
    std::size_t horizon = 0;

    /// Days before the held-out horizon.
    std::size_t history_days() const noexcept { return series.days() - horizon; }
    Eigen::MatrixXd history() const;
    Eigen::MatrixXd held_out() const;
    std::vector<std::string> held_out_dates() const;
};

class Pipeline {
public:
    explicit Pipeline(RunConfig config);

    /// Runs one subcommand, or every configured stage for "run", then updates
    /// manifest.json. Returns the artifact names written, relative to the output directory.
    std::vector<std::string> run(const std::string& command);

    const RunConfig& config() const noexcept { return config_; }
    const std::string& hash() const noexcept { return hash_; }
    const std::string& stamp() const noexcept { return stamp_; }
    std::string path(const std::string& name) const;

    /// Loaded on first use.
    const Observed& observed();

private:
    void dispatch(const std::string& command);
    void simulate();
    void gen_corpus();
    void train_cleirnet();
    void train_tdefsi();
    void forecast();
    void evaluate();
    void dependency();
    void select();
    void sweep_delta();
    void report();
    geo::CountyTable county_table() const;
    void record(const std::string& name);
    void write_manifest(const std::string& command);

    RunConfig config_;
    std::string hash_;
    std::string stamp_;
    std::optional<Observed> observed_;
    std::vector<std::string> written_;
};

/// Routes log output to stderr at `level` (error, warn, info or debug; empty means warn).
/// Returns false, keeping warn, for any other value.
bool configure_logging(const std::string& level);

/// One-line JSON diagnostic: error kind, message, command and any id lists carried by the error.
std::string diagnostic_json(const std::exception& error, const std::string& command);

}  // namespace epiforge::pipeline

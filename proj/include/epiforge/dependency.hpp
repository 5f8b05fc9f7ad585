#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/geo.hpp"

namespace epiforge::dependency {

enum class MiTransform { Raw, DailyDifference };

struct MiConfig {
    std::size_t bins = 8;
    std::size_t min_length = 30;
    MiTransform transform = MiTransform::DailyDifference;

    void validate() const;
};

struct MiEstimate {
    double nats = 0.0;
    bool degenerate = false;  ///< at least one input was constant after the transform
};

/// Bin index in [0, bins) per sample. Edges sit at sorted positions floor(k*n/bins);
/// equal values always share a bin.
std::vector<int> equal_frequency_bins(const Eigen::VectorXd& x, std::size_t bins);

/// Plug-in MI in nats of two already-binned sequences.
double plugin_mi(const std::vector<int>& a, const std::vector<int>& b, std::size_t bins);

/// Plug-in entropy in nats of a binned sequence.
double plugin_entropy(const std::vector<int>& a, std::size_t bins);

/// Applies the configured transform, bins each series on its own quantiles and
/// returns the plug-in MI. Throws DimensionError on a length mismatch and
/// std::invalid_argument on series shorter than min_length.
MiEstimate estimate_mi(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const MiConfig& config);

using MiEstimator = std::function<MiEstimate(const Eigen::VectorXd&, const Eigen::VectorXd&, const MiConfig&)>;

struct NeighborDependency {
    Eigen::VectorXd raw;                    ///< mean neighbour MI per county
    std::vector<std::size_t> n_neighbors;
    std::vector<bool> isolated;             ///< no neighbours; raw is 0
    std::vector<bool> degenerate;           ///< some pair involved a constant series
};

/// Mean MI of each county's series (rows of `cumulative`) with its neighbours' series.
/// Each undirected edge is estimated once.
NeighborDependency neighbor_dependency(const Eigen::MatrixXd& cumulative, const geo::AdjacencyList& adjacency,
                                       const MiConfig& config, const MiEstimator& estimator = estimate_mi,
                                       std::size_t jobs = 1);

struct NormalizedScores {
    Eigen::VectorXd values;
    bool degenerate = false;  ///< max == min; every score is 0
};

/// (raw - min) / (max - min).
NormalizedScores normalize_scores(const Eigen::VectorXd& raw);

/// keep[i] is false exactly when normalized[i] < delta.
std::vector<bool> select_counties(const Eigen::VectorXd& normalized, double delta);

double removed_fraction(const std::vector<bool>& keep);

struct DependencyScores {
    NeighborDependency neighbors;
    NormalizedScores normalized;
};

DependencyScores score_counties(const Eigen::MatrixXd& cumulative, const geo::AdjacencyList& adjacency,
                                const MiConfig& config, const MiEstimator& estimator = estimate_mi,
                                std::size_t jobs = 1);

struct SweepMetrics {
    double mse = 0.0;
    double weighted_mse = 0.0;
};

struct SweepRow {
    double delta = 0.0;
    double removed_fraction = 0.0;
    std::optional<SweepMetrics> metrics;
    std::string error;  ///< set when the callback threw
};

using SweepEvaluator = std::function<SweepMetrics(const std::vector<bool>& keep, double delta)>;

/// One row per delta; deltas must be ascending and within [0, 1]. A throwing
/// callback marks its row and the sweep continues.
std::vector<SweepRow> delta_sweep(const Eigen::VectorXd& normalized, const std::vector<double>& deltas,
                                  const SweepEvaluator& evaluate);

std::vector<SweepRow> delta_sweep(const Eigen::MatrixXd& cumulative, const geo::AdjacencyList& adjacency,
                                  const MiConfig& config, const std::vector<double>& deltas,
                                  const SweepEvaluator& evaluate);

/// county_id,raw_mi,normalized_mi,n_neighbors,degenerate_flag
void write_dependency_report(const std::string& path, const std::vector<std::string>& county_ids,
                             const DependencyScores& scores, const std::string& stamp = {});

/// county_id,keep,delta
void write_mask(const std::string& path, const std::vector<std::string>& county_ids, const std::vector<bool>& keep,
                double delta, const std::string& stamp = {});

/// Reads a mask file back as keep bits aligned with `county_ids`.
std::vector<bool> read_mask(const std::string& path, const std::vector<std::string>& county_ids);

/// delta,removed_fraction,mse,weighted_mse,error
void write_sweep(const std::string& path, const std::vector<SweepRow>& rows, const std::string& stamp = {});

}  // namespace epiforge::dependency

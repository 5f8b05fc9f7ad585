#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/error.hpp"

namespace epiforge::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

/// FIPS codes of the four New York City boroughs that the JHU county series
/// folds into the New York County row.
inline constexpr std::array<const char*, 4> kAggregatedNyIds = {"36005", "36047", "36081", "36085"};

struct CountyRecord {
    std::string id;
    std::string name;
    std::string state;
    double lat = 0.0;
    double lon = 0.0;
    std::int64_t population = 1;
    double density = 1.0;
};

/// Validates the lat/lon/population/density invariants; throws std::invalid_argument.
void validate(const CountyRecord& record);

/// Ordered county records. Row i of every downstream matrix refers to records()[i].
class CountyTable {
public:
    CountyTable() = default;
    /// Sorts by id and rejects duplicates.
    explicit CountyTable(std::vector<CountyRecord> records);

    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    const CountyRecord& operator[](std::size_t i) const { return records_[i]; }
    const std::vector<CountyRecord>& records() const noexcept { return records_; }
    std::optional<std::size_t> index_of(const std::string& id) const;

    Eigen::VectorXd populations() const;
    Eigen::VectorXd densities() const;
    std::vector<std::string> ids() const;

    /// Keeps rows whose mask entry is true, preserving order.
    CountyTable subset(const std::vector<bool>& keep) const;

private:
    std::vector<CountyRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class SourceFormat {
    FeatureCsv,  ///< fips,name,state,lat,lon,population,density
    Jhu,         ///< JHU time-series layout joined with a FeatureCsv companion
};

struct LoadOptions {
    /// Defaults to true for Jhu and false for FeatureCsv.
    std::optional<bool> drop_aggregated_ny;
    /// Population/density source; required for SourceFormat::Jhu.
    std::string companion_path;
};

CountyTable load_county_table(const std::string& path, SourceFormat format, const LoadOptions& options = {});

/// Zero-pads numeric FIPS codes to five digits ("1001.0" -> "01001").
std::string normalize_fips(const std::string& raw);

/// Counties x days cumulative recorded cases, rows aligned with a CountyTable.
struct CaseSeries {
    std::vector<std::string> county_ids;
    std::vector<std::string> dates;
    Eigen::MatrixXd cumulative;
    /// Negative source entries that were floored to zero during ingestion.
    std::size_t floored_entries = 0;

    std::size_t counties() const noexcept { return static_cast<std::size_t>(cumulative.rows()); }
    std::size_t days() const noexcept { return static_cast<std::size_t>(cumulative.cols()); }
    /// Day-over-day increase, floored at 0; column 0 equals the first cumulative column.
    Eigen::MatrixXd incidence() const;
    /// First `days` columns.
    CaseSeries head(std::size_t days) const;
};

/// Raw JHU rows in file order, before alignment with a county table.
struct JhuFile {
    std::vector<CountyRecord> rows;  ///< population/density left at placeholder values
    std::vector<std::string> dates;
    Eigen::MatrixXd cumulative;
    std::size_t floored_entries = 0;
};

JhuFile read_jhu(const std::string& path, bool drop_aggregated_ny = true);

/// Case series for `table` taken from a JHU-layout file; every table id must be present.
CaseSeries load_case_series(const std::string& jhu_path, const CountyTable& table);

/// Case series in the file's own row order (no population data needed).
CaseSeries case_series_from_jhu(const JhuFile& file);

/// Writes `series` in JHU layout so that it can be re-read by load_case_series.
void write_jhu(const std::string& path, const CountyTable& table, const CaseSeries& series);

/// Writes the companion feature CSV.
void write_county_table(const std::string& path, const CountyTable& table);

double haversine_distance(const CountyRecord& a, const CountyRecord& b);
Eigen::MatrixXd distance_matrix(const CountyTable& table);

inline constexpr std::size_t kFeatureCount = 6;

/// Standardized [lat, lon, population, density, ln(population), ln(density)].
struct FeatureMatrix {
    Eigen::MatrixXd values;  ///< counties x 6
    std::array<double, kFeatureCount> mean{};
    std::array<double, kFeatureCount> stdev{};
    std::array<bool, kFeatureCount> degenerate{};

    bool any_degenerate() const;
    /// Maps standardized values back to raw feature units (degenerate columns return the mean).
    Eigen::MatrixXd destandardize() const;
};

FeatureMatrix build_feature_matrix(const CountyTable& table);

/// Column-wise z-score with population variance; zero-variance columns become 0.
FeatureMatrix standardize_columns(const Eigen::MatrixXd& raw);

struct AdjacencyList {
    std::vector<std::vector<std::size_t>> neighbors;

    std::size_t size() const noexcept { return neighbors.size(); }
    std::size_t edge_count() const;
    bool is_symmetric() const;
};

/// Reads "fips_a,fips_b" lines ('#' comments); symmetrizes and removes self-loops.
AdjacencyList load_adjacency(const std::string& path, const CountyTable& table);

/// Builds an adjacency list from explicit position pairs with the same cleanup.
AdjacencyList make_adjacency(std::size_t counties, const std::vector<std::pair<std::size_t, std::size_t>>& edges);

/// Symmetrized k-nearest-neighbour graph by haversine distance.
AdjacencyList knn_adjacency(const CountyTable& table, std::size_t k);

/// Keeps only rows/neighbours whose mask entry is true; positions are renumbered.
AdjacencyList subset(const AdjacencyList& adjacency, const std::vector<bool>& keep);

/// Desk-scale synthetic counties: lat/lon in the continental US box,
/// log-uniform populations and densities.
CountyTable synthetic_county_table(std::size_t counties, std::uint64_t seed);

}  // namespace epiforge::geo

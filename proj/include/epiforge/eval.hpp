#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/forecast.hpp"
#include "epiforge/geo.hpp"

namespace epiforge::eval {

/// Every horizon column repeats the cumulative value observed on `base_day`.
ForecastFrame naive_no_change(const Eigen::MatrixXd& cumulative, std::size_t base_day, std::size_t horizon);
ForecastFrame naive_no_change(const geo::CaseSeries& series, std::size_t base_day, std::size_t horizon);

struct PerDaySeries {
    Eigen::VectorXd mse;  ///< mean over counties of the squared error per horizon day
    Eigen::VectorXd se;   ///< population stdev of the squared errors / sqrt(counties)
    Eigen::VectorXd band_lo;
    Eigen::VectorXd band_hi;
};

/// Bands are mse +- se / 5.
PerDaySeries per_day_series(const ForecastFrame& forecast, const Eigen::MatrixXd& truth);

struct MetricReport {
    double mse = 0.0;
    double weighted_mse = 0.0;
    double msle = 0.0;
    double mae = 0.0;
    double pcci = 0.0;  ///< predicted national increase over the horizon; signed
    Eigen::VectorXd per_day_mse;
    Eigen::VectorXd se_band;  ///< se / 5 per day
};

/// `truth` is counties x horizon cumulative. Weighted MSE is the mean of
/// w * err^2 with w = 1 / (ln(population + 1) * ln(day + 1)).
MetricReport compute_metrics(const ForecastFrame& forecast, const Eigen::MatrixXd& truth,
                             const Eigen::VectorXd& populations);

struct StateRank {
    std::string state;
    double model_mse = 0.0;
    double naive_mse = 0.0;
    double ratio = 0.0;  ///< +inf when the naive MSE is 0
    std::size_t rank = 0;
};

struct StateRanking {
    std::vector<StateRank> rows;  ///< ascending ratio, ties by state name
    std::size_t best = 0;
    std::size_t median = 0;  ///< index (n - 1) / 2
    std::size_t worst = 0;
};

StateRanking rank_states(const ForecastFrame& forecast, const Eigen::MatrixXd& truth, const geo::CountyTable& table,
                         const ForecastFrame& naive);

std::string metric_report_json(const MetricReport& report, const std::map<std::string, std::string>& metadata = {});
void write_metric_report(const std::string& path, const MetricReport& report,
                         const std::map<std::string, std::string>& metadata = {});
MetricReport read_metric_report(const std::string& path, std::map<std::string, std::string>* metadata = nullptr);

/// day,mse,band_lo,band_hi with day counted from 1.
void write_per_day_csv(const std::string& path, const MetricReport& report, const std::string& stamp = {});
void write_per_day_csv(const std::string& path, const PerDaySeries& series, const std::string& stamp = {});

/// state,ratio,rank
void write_state_ranking(const std::string& path, const StateRanking& ranking, const std::string& stamp = {});

}  // namespace epiforge::eval

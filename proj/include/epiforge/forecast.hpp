#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace epiforge {

/// Counties x horizon cumulative predictions issued from one base day.
struct ForecastFrame {
    std::size_t base_day = 0;
    Eigen::VectorXd base;          ///< observed cumulative cases on the base day
    Eigen::MatrixXd predictions;   ///< cumulative, column i is base_day + 1 + i
    Eigen::MatrixXd deltas;        ///< daily changes; column 0 is relative to `base`
    std::map<std::string, std::string> metadata;

    std::size_t counties() const noexcept { return static_cast<std::size_t>(predictions.rows()); }
    std::size_t horizon() const noexcept { return static_cast<std::size_t>(predictions.cols()); }

    /// Builds a frame whose deltas are the exact differences of consecutive predictions.
    static ForecastFrame from_predictions(std::size_t base_day, Eigen::VectorXd base, Eigen::MatrixXd predictions);
};

/// Writes county_id,date,predicted_cumulative,predicted_delta rows. `dates` holds one
/// label per horizon column; an optional first line starting with '#' carries `stamp`.
void write_forecast_csv(const std::string& path, const ForecastFrame& frame, const std::vector<std::string>& county_ids,
                        const std::vector<std::string>& dates, const std::string& stamp = {});

/// Reads a forecast CSV written by write_forecast_csv. County order follows `county_ids`;
/// the base vector is recovered as predicted_cumulative - predicted_delta of the first date.
ForecastFrame read_forecast_csv(const std::string& path, const std::vector<std::string>& county_ids,
                                std::vector<std::string>* dates = nullptr);

}  // namespace epiforge

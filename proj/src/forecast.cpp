#include "epiforge/forecast.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "epiforge/error.hpp"
#include "epiforge/text.hpp"

namespace epiforge {

ForecastFrame ForecastFrame::from_predictions(std::size_t base_day, Eigen::VectorXd base, Eigen::MatrixXd predictions) {
    if (base.size() != predictions.rows()) throw DimensionError("forecast base length does not match county count");
    ForecastFrame f;
    f.base_day = base_day;
    f.deltas.resize(predictions.rows(), predictions.cols());
    for (Eigen::Index i = 0; i < predictions.cols(); ++i) {
        f.deltas.col(i) = predictions.col(i) - (i == 0 ? base : Eigen::VectorXd(predictions.col(i - 1)));
    }
    f.base = std::move(base);
    f.predictions = std::move(predictions);
    return f;
}

void write_forecast_csv(const std::string& path, const ForecastFrame& frame, const std::vector<std::string>& county_ids,
                        const std::vector<std::string>& dates, const std::string& stamp) {
    if (county_ids.size() != frame.counties()) throw DimensionError("forecast csv: county id count does not match frame");
    if (dates.size() != frame.horizon()) throw DimensionError("forecast csv: date count does not match horizon");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    if (!stamp.empty()) out << "# " << stamp << '\n';
    out << "county_id,date,predicted_cumulative,predicted_delta\n";
    for (std::size_t j = 0; j < county_ids.size(); ++j) {
        for (std::size_t i = 0; i < dates.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(j);
            const auto c = static_cast<Eigen::Index>(i);
            out << text::csv_field(county_ids[j]) << ',' << text::csv_field(dates[i]) << ','
                << text::format_double(frame.predictions(r, c)) << ',' << text::format_double(frame.deltas(r, c)) << '\n';
        }
    }
}

ForecastFrame read_forecast_csv(const std::string& path, const std::vector<std::string>& county_ids,
                                std::vector<std::string>* dates_out) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t j = 0; j < county_ids.size(); ++j) row_of.emplace(county_ids[j], j);
    std::vector<std::string> dates;
    std::unordered_map<std::string, std::size_t> col_of;
    struct Cell {
        std::size_t row, col;
        double cumulative, delta;
    };
    std::vector<Cell> cells;
    std::vector<std::string> unknown;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        const auto f = text::split_csv(line);
        if (f.size() != 4) throw ParseError(path, line_no, "expected 4 fields");
        auto row = row_of.find(f[0]);
        if (row == row_of.end()) {
            unknown.push_back(f[0]);
            continue;
        }
        auto [it, fresh] = col_of.emplace(f[1], dates.size());
        if (fresh) dates.push_back(f[1]);
        auto cum = text::parse_double(f[2]);
        auto del = text::parse_double(f[3]);
        if (!cum || !del) throw ParseError(path, line_no, "non-numeric prediction");
        cells.push_back({row->second, it->second, *cum, *del});
    }
    if (!unknown.empty()) throw UnknownIdError(std::move(unknown));
    const auto n = static_cast<Eigen::Index>(county_ids.size());
    const auto h = static_cast<Eigen::Index>(dates.size());
    if (cells.size() != county_ids.size() * dates.size()) {
        throw DimensionError("forecast csv '" + path + "' does not cover every county and date");
    }
    ForecastFrame frame;
    frame.predictions.resize(n, h);
    frame.deltas.resize(n, h);
    for (const auto& c : cells) {
        frame.predictions(static_cast<Eigen::Index>(c.row), static_cast<Eigen::Index>(c.col)) = c.cumulative;
        frame.deltas(static_cast<Eigen::Index>(c.row), static_cast<Eigen::Index>(c.col)) = c.delta;
    }
    frame.base = h > 0 ? Eigen::VectorXd(frame.predictions.col(0) - frame.deltas.col(0)) : Eigen::VectorXd::Zero(n);
    if (dates_out) *dates_out = std::move(dates);
    return frame;
}

}  // namespace epiforge

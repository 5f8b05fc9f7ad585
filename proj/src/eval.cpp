#include "epiforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

#include "epiforge/cleirnet.hpp"
#include "epiforge/error.hpp"
#include "epiforge/text.hpp"

namespace epiforge::eval {

namespace {

void check_shapes(const ForecastFrame& forecast, const Eigen::MatrixXd& truth) {
    if (forecast.predictions.rows() != truth.rows() || forecast.predictions.cols() != truth.cols()) {
        throw DimensionError("forecast is " + std::to_string(forecast.predictions.rows()) + "x" +
                             std::to_string(forecast.predictions.cols()) + " but truth is " + std::to_string(truth.rows()) +
                             "x" + std::to_string(truth.cols()));
    }
    if (truth.size() == 0) throw DimensionError("empty forecast");
}

std::ofstream open_out(const std::string& path, const std::string& stamp) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    if (!stamp.empty()) out << "# " << stamp << '\n';
    return out;
}

std::string format_ratio(double r) { return std::isinf(r) ? "inf" : text::format_double(r); }

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ForecastFrame naive_no_change(const Eigen::MatrixXd& cumulative, std::size_t base_day, std::size_t horizon) {
    if (base_day >= static_cast<std::size_t>(cumulative.cols())) {
        throw std::out_of_range("base day " + std::to_string(base_day) + " outside a series of " +
                                std::to_string(cumulative.cols()) + " days");
    }
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    const Eigen::VectorXd base = cumulative.col(static_cast<Eigen::Index>(base_day));
    ForecastFrame f;
    f.base_day = base_day;
    f.base = base;
    f.predictions = base.replicate(1, static_cast<Eigen::Index>(horizon));
    f.deltas = Eigen::MatrixXd::Zero(base.size(), static_cast<Eigen::Index>(horizon));
    f.metadata["model"] = "naive";
    return f;
}

ForecastFrame naive_no_change(const geo::CaseSeries& series, std::size_t base_day, std::size_t horizon) {
    return naive_no_change(series.cumulative, base_day, horizon);
}

PerDaySeries per_day_series(const ForecastFrame& forecast, const Eigen::MatrixXd& truth) {
    check_shapes(forecast, truth);
    const Eigen::MatrixXd sq = (forecast.predictions - truth).array().square().matrix();
    const double n = static_cast<double>(sq.rows());
    PerDaySeries s;
    s.mse = sq.colwise().mean().transpose();
    s.se.resize(sq.cols());
    for (Eigen::Index d = 0; d < sq.cols(); ++d) {
        const double var = (sq.col(d).array() - s.mse[d]).square().sum() / n;
        s.se[d] = std::sqrt(var) / std::sqrt(n);
    }
    s.band_lo = s.mse - s.se / 5.0;
    s.band_hi = s.mse + s.se / 5.0;
    return s;
}

MetricReport compute_metrics(const ForecastFrame& forecast, const Eigen::MatrixXd& truth,
                             const Eigen::VectorXd& populations) {
    check_shapes(forecast, truth);
    if (populations.size() != truth.rows()) throw DimensionError("population vector does not match county count");
    if (forecast.base.size() != truth.rows()) throw DimensionError("forecast base does not match county count");
    const Eigen::ArrayXXd err = (forecast.predictions - truth).array();
    MetricReport r;
    r.mse = err.square().mean();
    const Eigen::MatrixXd w = cleirnet::loss_weights(populations, static_cast<std::size_t>(truth.cols()));
    r.weighted_mse = (w.array() * err.square()).mean();
    const Eigen::ArrayXXd lp = forecast.predictions.array().max(0.0).log1p();
    const Eigen::ArrayXXd lt = truth.array().max(0.0).log1p();
    r.msle = (lp - lt).square().mean();
    r.mae = err.abs().mean();
    r.pcci = (forecast.predictions.col(forecast.predictions.cols() - 1) - forecast.base).sum();
    const auto days = per_day_series(forecast, truth);
    r.per_day_mse = days.mse;
    r.se_band = days.se / 5.0;
    return r;
}

StateRanking rank_states(const ForecastFrame& forecast, const Eigen::MatrixXd& truth, const geo::CountyTable& table,
                         const ForecastFrame& naive) {
    check_shapes(forecast, truth);
    check_shapes(naive, truth);
    if (table.size() != static_cast<std::size_t>(truth.rows())) throw DimensionError("county table does not match forecast");
    std::map<std::string, std::pair<double, double>> sums;
    std::map<std::string, double> counts;
    for (std::size_t j = 0; j < table.size(); ++j) {
        const auto& state = table[j].state;
        if (state.empty()) throw std::invalid_argument("county " + table[j].id + " has no state");
        const auto r = static_cast<Eigen::Index>(j);
        auto& s = sums[state];
        s.first += (forecast.predictions.row(r) - truth.row(r)).squaredNorm();
        s.second += (naive.predictions.row(r) - truth.row(r)).squaredNorm();
        counts[state] += static_cast<double>(truth.cols());
    }
    StateRanking out;
    for (const auto& [state, s] : sums) {
        StateRank row;
        row.state = state;
        row.model_mse = s.first / counts[state];
        row.naive_mse = s.second / counts[state];
        row.ratio = row.naive_mse == 0.0 ? std::numeric_limits<double>::infinity() : row.model_mse / row.naive_mse;
        out.rows.push_back(row);
    }
    std::stable_sort(out.rows.begin(), out.rows.end(), [](const StateRank& a, const StateRank& b) { return a.ratio < b.ratio; });
    for (std::size_t i = 0; i < out.rows.size(); ++i) out.rows[i].rank = i + 1;
    out.best = 0;
    out.worst = out.rows.size() - 1;
    out.median = (out.rows.size() - 1) / 2;
    return out;
}

std::string metric_report_json(const MetricReport& r, const std::map<std::string, std::string>& metadata) {
    nlohmann::ordered_json j;
    j["mse"] = r.mse;
    j["weighted_mse"] = r.weighted_mse;
    j["msle"] = r.msle;
    j["mae"] = r.mae;
    j["pcci"] = r.pcci;
    j["per_day_mse"] = to_vector(r.per_day_mse);
    j["se_band"] = to_vector(r.se_band);
    if (!metadata.empty()) j["metadata"] = metadata;
    return j.dump(2) + "\n";
}

void write_metric_report(const std::string& path, const MetricReport& report,
                         const std::map<std::string, std::string>& metadata) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << metric_report_json(report, metadata);
}

MetricReport read_metric_report(const std::string& path, std::map<std::string, std::string>* metadata) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    const auto j = nlohmann::json::parse(in);
    MetricReport r;
    r.mse = j.at("mse").get<double>();
    r.weighted_mse = j.at("weighted_mse").get<double>();
    r.msle = j.at("msle").get<double>();
    r.mae = j.at("mae").get<double>();
    r.pcci = j.at("pcci").get<double>();
    r.per_day_mse = from_vector(j.at("per_day_mse").get<std::vector<double>>());
    r.se_band = from_vector(j.at("se_band").get<std::vector<double>>());
    if (r.per_day_mse.size() != r.se_band.size()) throw DimensionError("per-day and band lengths differ in '" + path + "'");
    if (metadata && j.contains("metadata")) *metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return r;
}

void write_per_day_csv(const std::string& path, const MetricReport& report, const std::string& stamp) {
    PerDaySeries s;
    s.mse = report.per_day_mse;
    s.se = report.se_band * 5.0;
    s.band_lo = report.per_day_mse - report.se_band;
    s.band_hi = report.per_day_mse + report.se_band;
    write_per_day_csv(path, s, stamp);
}

void write_per_day_csv(const std::string& path, const PerDaySeries& series, const std::string& stamp) {
    auto out = open_out(path, stamp);
    out << "day,mse,band_lo,band_hi\n";
    for (Eigen::Index d = 0; d < series.mse.size(); ++d) {
        out << d + 1 << ',' << text::format_double(series.mse[d]) << ',' << text::format_double(series.band_lo[d]) << ','
            << text::format_double(series.band_hi[d]) << '\n';
    }
}

void write_state_ranking(const std::string& path, const StateRanking& ranking, const std::string& stamp) {
    auto out = open_out(path, stamp);
    out << "state,ratio,rank\n";
    for (const auto& r : ranking.rows) out << text::csv_field(r.state) << ',' << format_ratio(r.ratio) << ',' << r.rank << '\n';
}

}  // namespace epiforge::eval

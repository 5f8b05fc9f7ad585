#include "epiforge/dependency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "epiforge/error.hpp"
#include "epiforge/parallel.hpp"
#include "epiforge/text.hpp"

namespace epiforge::dependency {

namespace {

Eigen::VectorXd transformed(const Eigen::VectorXd& x, MiTransform transform) {
    if (transform == MiTransform::Raw || x.size() < 2) return x;
    return x.tail(x.size() - 1) - x.head(x.size() - 1);
}

bool constant(const Eigen::VectorXd& x) { return x.size() == 0 || x.maxCoeff() == x.minCoeff(); }

std::ofstream open_out(const std::string& path, const std::string& stamp) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    if (!stamp.empty()) out << "# " << stamp << '\n';
    return out;
}

}  // namespace

void MiConfig::validate() const {
    if (bins < 2) throw std::invalid_argument("bins must be >= 2");
}

std::vector<int> equal_frequency_bins(const Eigen::VectorXd& x, std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("bins must be >= 2");
    const auto n = static_cast<std::size_t>(x.size());
    std::vector<int> out(n, 0);
    if (n == 0) return out;
    std::vector<double> sorted(x.data(), x.data() + n);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    edges.reserve(bins - 1);
    for (std::size_t k = 1; k < bins; ++k) edges.push_back(sorted[std::min(n - 1, k * n / bins)]);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), x[static_cast<Eigen::Index>(i)]) - edges.begin());
    }
    return out;
}

double plugin_mi(const std::vector<int>& a, const std::vector<int>& b, std::size_t bins) {
    if (a.size() != b.size()) throw DimensionError("binned sequences differ in length");
    if (a.empty()) return 0.0;
    const auto B = static_cast<Eigen::Index>(bins);
    Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(B, B);
    for (std::size_t i = 0; i < a.size(); ++i) joint(a[i], b[i]) += 1.0;
    const double n = static_cast<double>(a.size());
    const Eigen::VectorXd pa = joint.rowwise().sum();
    const Eigen::VectorXd pb = joint.colwise().sum().transpose();
    double mi = 0.0;
    for (Eigen::Index r = 0; r < B; ++r) {
        for (Eigen::Index c = 0; c < B; ++c) {
            const double count = joint(r, c);
            if (count > 0.0) mi += count / n * std::log(count * n / (pa[r] * pb[c]));
        }
    }
    return std::max(0.0, mi);
}

double plugin_entropy(const std::vector<int>& a, std::size_t bins) {
    if (a.empty()) return 0.0;
    std::vector<double> counts(bins, 0.0);
    for (int v : a) counts[static_cast<std::size_t>(v)] += 1.0;
    const double n = static_cast<double>(a.size());
    double h = 0.0;
    for (double c : counts) {
        if (c > 0.0) h -= c / n * std::log(c / n);
    }
    return h;
}

MiEstimate estimate_mi(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const MiConfig& config) {
    config.validate();
    if (x.size() != y.size()) {
        throw DimensionError("series lengths differ (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
    }
    if (static_cast<std::size_t>(x.size()) < config.min_length) {
        throw std::invalid_argument("series of length " + std::to_string(x.size()) + " is shorter than min_length " +
                                    std::to_string(config.min_length));
    }
    const Eigen::VectorXd tx = transformed(x, config.transform);
    const Eigen::VectorXd ty = transformed(y, config.transform);
    if (constant(tx) || constant(ty)) return {0.0, true};
    return {plugin_mi(equal_frequency_bins(tx, config.bins), equal_frequency_bins(ty, config.bins), config.bins), false};
}

NeighborDependency neighbor_dependency(const Eigen::MatrixXd& cumulative, const geo::AdjacencyList& adjacency,
                                       const MiConfig& config, const MiEstimator& estimator, std::size_t jobs) {
    config.validate();
    const auto K = static_cast<std::size_t>(cumulative.rows());
    if (adjacency.size() != K) {
        throw DimensionError("adjacency covers " + std::to_string(adjacency.size()) + " counties, series has " + std::to_string(K));
    }
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j : adjacency.neighbors[i]) {
            if (j >= K) throw DimensionError("adjacency references county " + std::to_string(j) + " outside the series");
            if (j == i) continue;
            auto key = std::minmax(i, j);
            if (slot.emplace(key, pairs.size()).second) pairs.push_back(key);
        }
    }
    std::vector<MiEstimate> results(pairs.size());
    parallel_for(pairs.size(), jobs, [&](std::size_t p) {
        const auto [a, b] = pairs[p];
        results[p] = estimator(cumulative.row(static_cast<Eigen::Index>(a)).transpose(),
                               cumulative.row(static_cast<Eigen::Index>(b)).transpose(), config);
    });

    NeighborDependency out;
    out.raw = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    out.n_neighbors.assign(K, 0);
    out.isolated.assign(K, false);
    out.degenerate.assign(K, false);
    for (std::size_t i = 0; i < K; ++i) {
        double total = 0.0;
        std::size_t n = 0;
        for (std::size_t j : adjacency.neighbors[i]) {
            if (j == i) continue;
            const auto& r = results[slot.at(std::minmax(i, j))];
            total += r.nats;
            out.degenerate[i] = out.degenerate[i] || r.degenerate;
            ++n;
        }
        out.n_neighbors[i] = n;
        out.isolated[i] = n == 0;
        out.raw[static_cast<Eigen::Index>(i)] = n == 0 ? 0.0 : total / static_cast<double>(n);
    }
    return out;
}

NormalizedScores normalize_scores(const Eigen::VectorXd& raw) {
    if (raw.size() == 0) throw std::invalid_argument("no scores to normalize");
    const double lo = raw.minCoeff();
    const double hi = raw.maxCoeff();
    if (!(hi > lo)) return {Eigen::VectorXd::Zero(raw.size()), true};
    Eigen::VectorXd v = (raw.array() - lo) / (hi - lo);
    return {v.cwiseMax(0.0).cwiseMin(1.0), false};
}

std::vector<bool> select_counties(const Eigen::VectorXd& normalized, double delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must be in [0, 1]");
    std::vector<bool> keep(static_cast<std::size_t>(normalized.size()));
    for (Eigen::Index i = 0; i < normalized.size(); ++i) keep[static_cast<std::size_t>(i)] = !(normalized[i] < delta);
    return keep;
}

double removed_fraction(const std::vector<bool>& keep) {
    if (keep.empty()) return 0.0;
    const auto removed = std::count(keep.begin(), keep.end(), false);
    return static_cast<double>(removed) / static_cast<double>(keep.size());
}

DependencyScores score_counties(const Eigen::MatrixXd& cumulative, const geo::AdjacencyList& adjacency,
                                const MiConfig& config, const MiEstimator& estimator, std::size_t jobs) {
    DependencyScores s;
    s.neighbors = neighbor_dependency(cumulative, adjacency, config, estimator, jobs);
    s.normalized = normalize_scores(s.neighbors.raw);
    return s;
}

std::vector<SweepRow> delta_sweep(const Eigen::VectorXd& normalized, const std::vector<double>& deltas,
                                  const SweepEvaluator& evaluate) {
    if (!std::is_sorted(deltas.begin(), deltas.end())) throw std::invalid_argument("deltas must be ascending");
    std::vector<SweepRow> rows;
    for (double delta : deltas) {
        SweepRow row;
        row.delta = delta;
        const auto keep = select_counties(normalized, delta);
        row.removed_fraction = removed_fraction(keep);
        try {
            row.metrics = evaluate(keep, delta);
        } catch (const std::exception& e) {
            row.error = e.what();
            if (row.error.empty()) row.error = "evaluation failed";
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<SweepRow> delta_sweep(const Eigen::MatrixXd& cumulative, const geo::AdjacencyList& adjacency,
                                  const MiConfig& config, const std::vector<double>& deltas,
                                  const SweepEvaluator& evaluate) {
    return delta_sweep(score_counties(cumulative, adjacency, config).normalized.values, deltas, evaluate);
}

void write_dependency_report(const std::string& path, const std::vector<std::string>& county_ids,
                             const DependencyScores& scores, const std::string& stamp) {
    if (county_ids.size() != static_cast<std::size_t>(scores.neighbors.raw.size())) {
        throw DimensionError("county id count does not match scores");
    }
    auto out = open_out(path, stamp);
    out << "county_id,raw_mi,normalized_mi,n_neighbors,degenerate_flag\n";
    for (std::size_t i = 0; i < county_ids.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const bool flag = scores.neighbors.isolated[i] || scores.neighbors.degenerate[i] || scores.normalized.degenerate;
        out << text::csv_field(county_ids[i]) << ',' << text::format_double(scores.neighbors.raw[r]) << ','
            << text::format_double(scores.normalized.values[r]) << ',' << scores.neighbors.n_neighbors[i] << ','
            << (flag ? 1 : 0) << '\n';
    }
}

void write_mask(const std::string& path, const std::vector<std::string>& county_ids, const std::vector<bool>& keep,
                double delta, const std::string& stamp) {
    if (county_ids.size() != keep.size()) throw DimensionError("county id count does not match mask");
    auto out = open_out(path, stamp);
    out << "county_id,keep,delta\n";
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out << text::csv_field(county_ids[i]) << ',' << (keep[i] ? 1 : 0) << ',' << text::format_double(delta) << '\n';
    }
}

std::vector<bool> read_mask(const std::string& path, const std::vector<std::string>& county_ids) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < county_ids.size(); ++i) pos.emplace(county_ids[i], i);
    std::vector<int> state(county_ids.size(), -1);
    std::vector<std::string> unknown;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty() || line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        const auto f = text::split_csv(line);
        if (f.size() != 3) throw ParseError(path, line_no, "expected 3 fields");
        auto it = pos.find(f[0]);
        if (it == pos.end()) {
            unknown.push_back(f[0]);
            continue;
        }
        if (f[1] != "0" && f[1] != "1") throw ParseError(path, line_no, "keep must be 0 or 1");
        state[it->second] = f[1] == "1" ? 1 : 0;
    }
    if (!unknown.empty()) throw UnknownIdError(std::move(unknown));
    std::vector<bool> keep(county_ids.size());
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (state[i] < 0) throw DimensionError("mask '" + path + "' has no entry for county " + county_ids[i]);
        keep[i] = state[i] == 1;
    }
    return keep;
}

void write_sweep(const std::string& path, const std::vector<SweepRow>& rows, const std::string& stamp) {
    auto out = open_out(path, stamp);
    out << "delta,removed_fraction,mse,weighted_mse,error\n";
    for (const auto& r : rows) {
        out << text::format_double(r.delta) << ',' << text::format_double(r.removed_fraction) << ',';
        if (r.metrics) {
            out << text::format_double(r.metrics->mse) << ',' << text::format_double(r.metrics->weighted_mse);
        } else {
            out << ',';
        }
        out << ',' << text::csv_field(r.error) << '\n';
    }
}

}  // namespace epiforge::dependency

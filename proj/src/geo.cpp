#include "epiforge/geo.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "epiforge/random.hpp"
#include "epiforge/text.hpp"

namespace epiforge {

UnknownIdError::UnknownIdError(std::vector<std::string> ids)
    : std::runtime_error([&] {
          std::string msg = "unknown county id(s):";
          for (const auto& id : ids) msg += " " + id;
          return msg;
      }()),
      ids_(std::move(ids)) {}

}  // namespace epiforge

namespace epiforge::geo {

namespace {

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return in;
}

std::size_t require_column(const std::vector<std::string>& header, const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (text::trim(header[i]) == name) return i;
    }
    throw MissingColumnError(name);
}

bool is_aggregated_ny(const std::string& id) {
    return std::any_of(kAggregatedNyIds.begin(), kAggregatedNyIds.end(),
                       [&](const char* ny) { return id == ny; });
}

double field_double(const std::string& path, std::size_t line, const std::vector<std::string>& row, std::size_t col,
                    const char* name) {
    if (col >= row.size()) throw ParseError(path, line, std::string("missing field '") + name + "'");
    auto v = text::parse_double(row[col]);
    if (!v) throw ParseError(path, line, std::string("bad number in '") + name + "': '" + row[col] + "'");
    return *v;
}

// Rows whose FIPS field is empty (cruise ships and similar) keep a UID-based id.
std::string jhu_row_id(const std::vector<std::string>& row, std::size_t fips_col, std::size_t uid_col) {
    const std::string fips = text::trim(row[fips_col]);
    if (!fips.empty()) return normalize_fips(fips);
    return "UID" + text::trim(row[uid_col]);
}

std::vector<CountyRecord> read_feature_csv(const std::string& path) {
    auto in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
    const auto header = text::split_csv(line);
    const std::size_t c_fips = require_column(header, "fips");
    const std::size_t c_name = require_column(header, "name");
    const std::size_t c_state = require_column(header, "state");
    const std::size_t c_lat = require_column(header, "lat");
    const std::size_t c_lon = require_column(header, "lon");
    const std::size_t c_pop = require_column(header, "population");
    const std::size_t c_den = require_column(header, "density");

    std::vector<CountyRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty() || line[0] == '#') continue;
        const auto row = text::split_csv(line);
        if (row.size() < header.size()) throw ParseError(path, line_no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(row.size()));
        CountyRecord r;
        r.id = normalize_fips(row[c_fips]);
        r.name = text::trim(row[c_name]);
        r.state = text::trim(row[c_state]);
        r.lat = field_double(path, line_no, row, c_lat, "lat");
        r.lon = field_double(path, line_no, row, c_lon, "lon");
        const double pop = field_double(path, line_no, row, c_pop, "population");
        if (pop != std::floor(pop)) throw ParseError(path, line_no, "population must be an integer");
        r.population = static_cast<std::int64_t>(pop);
        r.density = field_double(path, line_no, row, c_den, "density");
        try {
            validate(r);
        } catch (const std::invalid_argument& e) {
            throw ParseError(path, line_no, e.what());
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace

void validate(const CountyRecord& r) {
    if (!(r.lat >= -90.0 && r.lat <= 90.0)) throw std::invalid_argument("county " + r.id + ": latitude out of range");
    if (!(r.lon >= -180.0 && r.lon <= 180.0)) throw std::invalid_argument("county " + r.id + ": longitude out of range");
    if (r.population < 1) throw std::invalid_argument("county " + r.id + ": population must be >= 1");
    if (!(r.density > 0.0) || !std::isfinite(r.density)) throw std::invalid_argument("county " + r.id + ": density must be > 0");
}

CountyTable::CountyTable(std::vector<CountyRecord> records) : records_(std::move(records)) {
    std::stable_sort(records_.begin(), records_.end(),
                     [](const CountyRecord& a, const CountyRecord& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < records_.size(); ++i) {
        validate(records_[i]);
        if (!index_.emplace(records_[i].id, i).second) throw DuplicateIdError(records_[i].id);
    }
}

std::optional<std::size_t> CountyTable::index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Eigen::VectorXd CountyTable::populations() const {
    Eigen::VectorXd p(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i) p[static_cast<Eigen::Index>(i)] = static_cast<double>(records_[i].population);
    return p;
}

Eigen::VectorXd CountyTable::densities() const {
    Eigen::VectorXd d(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i) d[static_cast<Eigen::Index>(i)] = records_[i].density;
    return d;
}

std::vector<std::string> CountyTable::ids() const {
    std::vector<std::string> out;
    out.reserve(size());
    for (const auto& r : records_) out.push_back(r.id);
    return out;
}

CountyTable CountyTable::subset(const std::vector<bool>& keep) const {
    if (keep.size() != size()) throw DimensionError("subset mask length does not match county count");
    std::vector<CountyRecord> kept;
    for (std::size_t i = 0; i < size(); ++i) {
        if (keep[i]) kept.push_back(records_[i]);
    }
    return CountyTable(std::move(kept));
}

std::string normalize_fips(const std::string& raw) {
    std::string t = text::trim(raw);
    if (auto dot = t.find('.'); dot != std::string::npos) {
        const std::string frac = t.substr(dot + 1);
        if (std::all_of(frac.begin(), frac.end(), [](char c) { return c == '0'; })) t = t.substr(0, dot);
    }
    if (!t.empty() && t.size() < 5 && std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); })) {
        t = std::string(5 - t.size(), '0') + t;
    }
    return t;
}

JhuFile read_jhu(const std::string& path, bool drop_aggregated_ny) {
    auto in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
    const auto header = text::split_csv(line);
    const std::size_t c_uid = require_column(header, "UID");
    const std::size_t c_fips = require_column(header, "FIPS");
    const std::size_t c_admin = require_column(header, "Admin2");
    const std::size_t c_state = require_column(header, "Province_State");
    const std::size_t c_lat = require_column(header, "Lat");
    const std::size_t c_lon = require_column(header, "Long_");
    const std::size_t c_key = require_column(header, "Combined_Key");

    const std::size_t first_date = c_key + 1;
    JhuFile file;
    for (std::size_t c = first_date; c < header.size(); ++c) file.dates.push_back(text::trim(header[c]));
    if (file.dates.empty()) throw ParseError(path, 1, "no date columns after Combined_Key");

    std::vector<std::vector<double>> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        const auto row = text::split_csv(line);
        if (row.size() != header.size()) {
            throw ParseError(path, line_no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(row.size()));
        }
        CountyRecord r;
        r.id = jhu_row_id(row, c_fips, c_uid);
        if (drop_aggregated_ny && is_aggregated_ny(r.id)) continue;
        r.name = text::trim(row[c_admin]);
        r.state = text::trim(row[c_state]);
        r.lat = field_double(path, line_no, row, c_lat, "Lat");
        r.lon = field_double(path, line_no, row, c_lon, "Long_");
        std::vector<double> series(file.dates.size());
        for (std::size_t d = 0; d < file.dates.size(); ++d) {
            double v = field_double(path, line_no, row, first_date + d, file.dates[d].c_str());
            if (v < 0.0) {
                v = 0.0;
                ++file.floored_entries;
            }
            series[d] = v;
        }
        file.rows.push_back(std::move(r));
        values.push_back(std::move(series));
    }
    file.cumulative.resize(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(file.dates.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (std::size_t d = 0; d < file.dates.size(); ++d) {
            file.cumulative(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = values[i][d];
        }
    }
    return file;
}

CountyTable load_county_table(const std::string& path, SourceFormat format, const LoadOptions& options) {
    if (format == SourceFormat::FeatureCsv) {
        auto records = read_feature_csv(path);
        if (options.drop_aggregated_ny.value_or(false)) {
            std::erase_if(records, [](const CountyRecord& r) { return is_aggregated_ny(r.id); });
        }
        return CountyTable(std::move(records));
    }

    if (options.companion_path.empty()) {
        throw std::invalid_argument("JHU-layout ingestion needs a companion feature CSV for population and density");
    }
    const JhuFile jhu = read_jhu(path, options.drop_aggregated_ny.value_or(true));
    std::map<std::string, CountyRecord> companion;
    for (auto& r : read_feature_csv(options.companion_path)) companion.emplace(r.id, std::move(r));

    std::vector<CountyRecord> records;
    std::vector<std::string> missing;
    for (const auto& row : jhu.rows) {
        auto it = companion.find(row.id);
        if (it == companion.end()) {
            missing.push_back(row.id);
            continue;
        }
        CountyRecord r = row;
        r.population = it->second.population;
        r.density = it->second.density;
        records.push_back(std::move(r));
    }
    if (!missing.empty()) throw UnknownIdError(std::move(missing));
    return CountyTable(std::move(records));
}

Eigen::MatrixXd CaseSeries::incidence() const {
    Eigen::MatrixXd inc(cumulative.rows(), cumulative.cols());
    if (cumulative.cols() == 0) return inc;
    inc.col(0) = cumulative.col(0);
    for (Eigen::Index d = 1; d < cumulative.cols(); ++d) {
        inc.col(d) = (cumulative.col(d) - cumulative.col(d - 1)).cwiseMax(0.0);
    }
    return inc;
}

CaseSeries CaseSeries::head(std::size_t n) const {
    if (n > days()) throw DimensionError("head: requested " + std::to_string(n) + " days of " + std::to_string(days()));
    CaseSeries out;
    out.county_ids = county_ids;
    out.dates.assign(dates.begin(), dates.begin() + static_cast<std::ptrdiff_t>(n));
    out.cumulative = cumulative.leftCols(static_cast<Eigen::Index>(n));
    out.floored_entries = floored_entries;
    return out;
}

CaseSeries load_case_series(const std::string& jhu_path, const CountyTable& table) {
    const JhuFile jhu = read_jhu(jhu_path, false);
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < jhu.rows.size(); ++i) row_of.emplace(jhu.rows[i].id, i);

    CaseSeries series;
    series.dates = jhu.dates;
    series.county_ids = table.ids();
    series.floored_entries = jhu.floored_entries;
    series.cumulative.resize(static_cast<Eigen::Index>(table.size()), static_cast<Eigen::Index>(jhu.dates.size()));
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < table.size(); ++i) {
        auto it = row_of.find(table[i].id);
        if (it == row_of.end()) {
            missing.push_back(table[i].id);
            continue;
        }
        series.cumulative.row(static_cast<Eigen::Index>(i)) = jhu.cumulative.row(static_cast<Eigen::Index>(it->second));
    }
    if (!missing.empty()) throw UnknownIdError(std::move(missing));
    return series;
}

CaseSeries case_series_from_jhu(const JhuFile& file) {
    CaseSeries series;
    for (const auto& r : file.rows) series.county_ids.push_back(r.id);
    series.dates = file.dates;
    series.cumulative = file.cumulative;
    series.floored_entries = file.floored_entries;
    return series;
}

void write_jhu(const std::string& path, const CountyTable& table, const CaseSeries& series) {
    if (series.counties() != table.size()) throw DimensionError("write_jhu: series/table county count mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "UID,FIPS,Admin2,Province_State,Lat,Long_,Combined_Key";
    for (const auto& d : series.dates) out << ',' << d;
    out << '\n';
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& r = table[i];
        out << i + 1 << ',' << text::csv_field(r.id) << ',' << text::csv_field(r.name) << ','
            << text::csv_field(r.state) << ',' << text::format_double(r.lat) << ',' << text::format_double(r.lon) << ','
            << text::csv_field(r.name + ", " + r.state + ", US");
        for (std::size_t d = 0; d < series.days(); ++d) {
            out << ',' << text::format_double(series.cumulative(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)));
        }
        out << '\n';
    }
}

void write_county_table(const std::string& path, const CountyTable& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "fips,name,state,lat,lon,population,density\n";
    for (const auto& r : table.records()) {
        out << text::csv_field(r.id) << ',' << text::csv_field(r.name) << ',' << text::csv_field(r.state) << ','
            << text::format_double(r.lat) << ',' << text::format_double(r.lon) << ',' << r.population << ','
            << text::format_double(r.density) << '\n';
    }
}

double haversine_distance(const CountyRecord& a, const CountyRecord& b) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double phi1 = a.lat * deg;
    const double phi2 = b.lat * deg;
    const double dphi = (b.lat - a.lat) * deg;
    const double dlambda = (b.lon - a.lon) * deg;
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlambda / 2.0);
    const double h = std::clamp(s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2, 0.0, 1.0);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

Eigen::MatrixXd distance_matrix(const CountyTable& table) {
    const auto n = static_cast<Eigen::Index>(table.size());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            d(i, j) = d(j, i) = haversine_distance(table[static_cast<std::size_t>(i)], table[static_cast<std::size_t>(j)]);
        }
    }
    return d;
}

bool FeatureMatrix::any_degenerate() const {
    return std::any_of(degenerate.begin(), degenerate.end(), [](bool b) { return b; });
}

Eigen::MatrixXd FeatureMatrix::destandardize() const {
    Eigen::MatrixXd raw = values;
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        const auto k = static_cast<std::size_t>(c);
        if (degenerate[k]) {
            raw.col(c).setConstant(mean[k]);
        } else {
            raw.col(c) = (values.col(c).array() * stdev[k] + mean[k]).matrix();
        }
    }
    return raw;
}

FeatureMatrix standardize_columns(const Eigen::MatrixXd& raw) {
    if (raw.cols() != static_cast<Eigen::Index>(kFeatureCount)) throw DimensionError("feature matrix must have 6 columns");
    if (raw.rows() == 0) throw std::invalid_argument("feature matrix needs at least one county");
    FeatureMatrix fm;
    fm.values.resize(raw.rows(), raw.cols());
    const double n = static_cast<double>(raw.rows());
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        const auto k = static_cast<std::size_t>(c);
        const double mean = raw.col(c).sum() / n;
        const double var = (raw.col(c).array() - mean).square().sum() / n;
        const double sd = std::sqrt(var);
        fm.mean[k] = mean;
        fm.stdev[k] = sd;
        // Relative threshold so that identical values with rounding noise still count as constant.
        const double scale = std::max(1.0, raw.col(c).cwiseAbs().maxCoeff());
        if (!(sd > 1e-12 * scale)) {
            fm.degenerate[k] = true;
            fm.values.col(c).setZero();
        } else {
            fm.values.col(c) = ((raw.col(c).array() - mean) / sd).matrix();
        }
    }
    return fm;
}

FeatureMatrix build_feature_matrix(const CountyTable& table) {
    if (table.empty()) throw std::invalid_argument("build_feature_matrix: empty county table");
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(table.size()), static_cast<Eigen::Index>(kFeatureCount));
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& r = table[i];
        const auto row = static_cast<Eigen::Index>(i);
        const double pop = static_cast<double>(r.population);
        raw(row, 0) = r.lat;
        raw(row, 1) = r.lon;
        raw(row, 2) = pop;
        raw(row, 3) = r.density;
        raw(row, 4) = std::log(pop);
        raw(row, 5) = std::log(r.density);
    }
    return standardize_columns(raw);
}

std::size_t AdjacencyList::edge_count() const {
    std::size_t total = 0;
    for (const auto& n : neighbors) total += n.size();
    return total / 2;
}

bool AdjacencyList::is_symmetric() const {
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        for (std::size_t j : neighbors[i]) {
            if (j == i || j >= neighbors.size()) return false;
            if (!std::binary_search(neighbors[j].begin(), neighbors[j].end(), i)) return false;
        }
    }
    return true;
}

AdjacencyList make_adjacency(std::size_t counties, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    std::vector<std::set<std::size_t>> sets(counties);
    for (auto [a, b] : edges) {
        if (a >= counties || b >= counties) throw std::out_of_range("adjacency edge references position outside table");
        if (a == b) continue;
        sets[a].insert(b);
        sets[b].insert(a);
    }
    AdjacencyList adj;
    adj.neighbors.reserve(counties);
    for (auto& s : sets) adj.neighbors.emplace_back(s.begin(), s.end());
    return adj;
}

AdjacencyList load_adjacency(const std::string& path, const CountyTable& table) {
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::set<std::string> unknown;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (text::trim(line).empty()) continue;
        const auto row = text::split_csv(line);
        if (row.size() != 2) throw ParseError(path, line_no, "expected 'fips_a,fips_b'");
        const std::string a = normalize_fips(row[0]);
        const std::string b = normalize_fips(row[1]);
        auto ia = table.index_of(a);
        auto ib = table.index_of(b);
        if (!ia) unknown.insert(a);
        if (!ib) unknown.insert(b);
        if (ia && ib) edges.emplace_back(*ia, *ib);
    }
    if (!unknown.empty()) throw UnknownIdError({unknown.begin(), unknown.end()});
    return make_adjacency(table.size(), edges);
}

AdjacencyList knn_adjacency(const CountyTable& table, std::size_t k) {
    const Eigen::MatrixXd d = distance_matrix(table);
    const std::size_t n = table.size();
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> order;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) order.push_back(j);
        }
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) <
                   d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
        });
        for (std::size_t m = 0; m < std::min(k, order.size()); ++m) edges.emplace_back(i, order[m]);
    }
    return make_adjacency(n, edges);
}

AdjacencyList subset(const AdjacencyList& adjacency, const std::vector<bool>& keep) {
    if (keep.size() != adjacency.size()) throw DimensionError("adjacency subset mask length mismatch");
    std::vector<std::size_t> new_index(keep.size(), 0);
    std::size_t next = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i]) new_index[i] = next++;
    }
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        for (std::size_t j : adjacency.neighbors[i]) {
            if (keep[j]) edges.emplace_back(new_index[i], new_index[j]);
        }
    }
    return make_adjacency(next, edges);
}

CountyTable synthetic_county_table(std::size_t counties, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CountyRecord> records;
    records.reserve(counties);
    for (std::size_t i = 0; i < counties; ++i) {
        CountyRecord r;
        std::ostringstream id;
        id << 'S' << std::setw(4) << std::setfill('0') << i + 1;
        r.id = id.str();
        r.name = "Synthetic " + std::to_string(i + 1);
        r.state = "ST" + std::to_string(i % 4);
        r.lat = rng.uniform(30.0, 45.0);
        r.lon = rng.uniform(-100.0, -80.0);
        r.population = static_cast<std::int64_t>(std::round(std::exp(rng.uniform(std::log(1e4), std::log(1e6)))));
        r.density = std::exp(rng.uniform(std::log(10.0), std::log(3000.0)));
        records.push_back(std::move(r));
    }
    return CountyTable(std::move(records));
}

}  // namespace epiforge::geo

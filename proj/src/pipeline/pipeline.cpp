#include "epiforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <typeinfo>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "epiforge/cleirnet.hpp"
#include "epiforge/dependency.hpp"
#include "epiforge/eval.hpp"
#include "epiforge/forecast.hpp"
#include "epiforge/parallel.hpp"
#include "epiforge/random.hpp"
#include "epiforge/seir.hpp"
#include "epiforge/tdefsi.hpp"
#include "epiforge/text.hpp"

namespace epiforge::pipeline {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kObservedCases = "observed_cases.csv";
constexpr const char* kCorpus = "corpus.txt";
constexpr const char* kManifest = "manifest.json";

std::string join(const std::vector<std::string>& items) {
    std::string s;
    for (const auto& i : items) s += (s.empty() ? "" : ", ") + i;
    return s;
}

std::string mismatch_message(const std::string& path, const std::vector<std::string>& missing,
                             const std::vector<std::string>& unexpected) {
    std::string s = "counties in '" + path + "' differ from the county table";
    if (!missing.empty()) s += "; missing: " + join(missing);
    if (!unexpected.empty()) s += "; unexpected: " + join(unexpected);
    return s;
}

std::string file_label(std::string arm) {
    std::replace(arm.begin(), arm.end(), '+', '_');
    return arm;
}

std::string member_checkpoint(std::size_t k) { return "cleirnet_member" + std::to_string(k) + ".ckpt"; }

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void require_file(const std::string& path, const std::string& hint) {
    if (!fs::exists(path)) throw std::runtime_error("missing '" + path + "'; " + hint);
}

/// County ids listed in the first column of a stamped CSV.
std::vector<std::string> csv_county_ids(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::set<std::string> ids;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        const auto fields = text::split_csv(line);
        if (!fields.empty()) ids.insert(fields[0]);
    }
    return {ids.begin(), ids.end()};
}

void check_counties(const std::string& path, const std::vector<std::string>& found,
                    const std::vector<std::string>& expected) {
    std::vector<std::string> a = found, b = expected, missing, unexpected;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(missing));
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(unexpected));
    if (!missing.empty() || !unexpected.empty()) throw CountyMismatchError(path, missing, unexpected);
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<bool>& keep) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i]) idx.push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(idx[r]);
    return out;
}

cleirnet::CleirConfig cleir_config(const RunConfig& config, std::size_t counties) {
    auto c = config.cleirnet.model;
    c.n_C = counties;
    c.n_X = geo::kFeatureCount;
    c.n_F = config.forecast.horizon;
    return c;
}

struct SummaryRow {
    std::string model;
    eval::MetricReport report;
};

void write_summary(const std::string& path, const std::vector<SummaryRow>& rows, const std::string& stamp) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    if (!stamp.empty()) out << "# " << stamp << '\n';
    out << "model,mse,weighted_mse,msle,mae,pcci,ratio_to_naive\n";
    double naive = 0.0;
    for (const auto& r : rows) {
        if (r.model == "naive") naive = r.report.mse;
    }
    for (const auto& r : rows) {
        const auto& m = r.report;
        out << r.model << ',' << text::format_double(m.mse) << ',' << text::format_double(m.weighted_mse) << ','
            << text::format_double(m.msle) << ',' << text::format_double(m.mae) << ',' << text::format_double(m.pcci)
            << ',' << (naive > 0.0 ? text::format_double(m.mse / naive) : std::string("inf")) << '\n';
    }
}

}  // namespace

CountyMismatchError::CountyMismatchError(const std::string& path, std::vector<std::string> missing,
                                         std::vector<std::string> unexpected)
    : DimensionError(mismatch_message(path, missing, unexpected)),
      missing_(std::move(missing)),
      unexpected_(std::move(unexpected)) {}

std::string artifact_stamp(const RunConfig& config) {
    return std::string("epiforge ") + EPIFORGE_VERSION + " config=" + config_hash(config).substr(0, 16) +
           " seed=" + std::to_string(config.seed);
}

Eigen::MatrixXd Observed::history() const { return series.cumulative.leftCols(static_cast<Eigen::Index>(history_days())); }

Eigen::MatrixXd Observed::held_out() const { return series.cumulative.rightCols(static_cast<Eigen::Index>(horizon)); }

std::vector<std::string> Observed::held_out_dates() const {
    return {series.dates.begin() + static_cast<std::ptrdiff_t>(history_days()), series.dates.end()};
}

Pipeline::Pipeline(RunConfig config)
    : config_(std::move(config)), hash_(config_hash(config_)), stamp_(artifact_stamp(config_)) {
    fs::create_directories(config_.out);
}

std::string Pipeline::path(const std::string& name) const { return (fs::path(config_.out) / name).string(); }

std::vector<std::string> Pipeline::run(const std::string& command) {
    written_.clear();
    if (command == "run") {
        for (const auto& stage : config_.stages) {
            spdlog::info("stage {}", stage);
            dispatch(stage);
        }
    } else {
        const auto& names = subcommands();
        if (std::find(names.begin(), names.end(), command) == names.end()) {
            throw std::invalid_argument("unknown subcommand '" + command + "'");
        }
        dispatch(command);
    }
    write_manifest(command);
    return written_;
}

void Pipeline::dispatch(const std::string& command) {
    if (command == "simulate") simulate();
    else if (command == "gen-corpus") gen_corpus();
    else if (command == "train-cleirnet") train_cleirnet();
    else if (command == "train-tdefsi") train_tdefsi();
    else if (command == "forecast") forecast();
    else if (command == "evaluate") evaluate();
    else if (command == "dependency") dependency();
    else if (command == "select") select();
    else if (command == "sweep-delta") sweep_delta();
    else if (command == "report") report();
    else throw std::invalid_argument("unknown subcommand '" + command + "'");
}

void Pipeline::record(const std::string& name) {
    if (std::find(written_.begin(), written_.end(), name) == written_.end()) written_.push_back(name);
    spdlog::debug("wrote {}", path(name));
}

geo::CountyTable Pipeline::county_table() const {
    if (config_.data.counties.empty()) {
        return geo::synthetic_county_table(config_.data.synthetic_counties, derive_seed(config_.seed, "counties"));
    }
    geo::LoadOptions options;
    options.drop_aggregated_ny = config_.data.drop_aggregated_ny;
    return geo::load_county_table(config_.data.counties, geo::SourceFormat::FeatureCsv, options);
}

const Observed& Pipeline::observed() {
    if (observed_) return *observed_;
    Observed o;
    o.table = county_table();
    if (o.table.size() < 2) throw std::invalid_argument("at least two counties are required");
    if (!config_.data.cases.empty()) {
        o.series = geo::load_case_series(config_.data.cases, o.table);
    } else {
        const auto simulated = path(kObservedCases);
        require_file(simulated, "set data.cases or run 'simulate' first");
        o.series = geo::load_case_series(simulated, o.table);
    }
    o.horizon = config_.forecast.horizon;
    if (o.series.days() < o.horizon + 2) {
        throw std::invalid_argument("case series has " + std::to_string(o.series.days()) +
                                    " days; the horizon needs at least " + std::to_string(o.horizon + 2));
    }
    if (config_.data.adjacency.empty()) {
        o.adjacency = geo::knn_adjacency(o.table, std::min(config_.data.knn, o.table.size() - 1));
    } else {
        o.adjacency = geo::load_adjacency(config_.data.adjacency, o.table);
    }
    o.features = geo::build_feature_matrix(o.table).values.transpose();
    spdlog::info("observed data: {} counties x {} days, {} held out", o.table.size(), o.series.days(), o.horizon);
    observed_ = std::move(o);
    return *observed_;
}

void Pipeline::simulate() {
    const auto& s = config_.simulate;
    const auto table = county_table();
    const auto flow = seir::build_flow_matrix(table, geo::distance_matrix(table), s.params.mu_flow, s.sparsity_epsilon);
    const auto trajectory = seir::simulate_scenario(table, flow, s.params, s.days, s.h, derive_seed(config_.seed, "simulate"));
    if (trajectory.clamp_events > 0) spdlog::warn("simulation clamped {} negative compartments", trajectory.clamp_events);
    geo::CaseSeries series;
    series.county_ids = table.ids();
    series.dates = date_labels(config_.data.start_date, 0, s.days);
    series.cumulative = trajectory.cumulative;
    geo::write_jhu(path(kObservedCases), table, series);
    record(kObservedCases);
    geo::write_county_table(path("counties.csv"), table);
    record("counties.csv");
    observed_.reset();
}

void Pipeline::gen_corpus() {
    const auto& c = config_.corpus;
    seir::CorpusOptions options;
    options.jobs = config_.jobs;
    options.sparsity_epsilon = c.sparsity_epsilon;
    const auto corpus = seir::generate_corpus(county_table(), c.ranges, c.n_train, c.n_valid, c.days, c.h,
                                              derive_seed(config_.seed, "corpus"), options);
    seir::write_corpus(path(kCorpus), corpus);
    record(kCorpus);
    spdlog::info("corpus: {} training and {} validation scenarios", c.n_train, c.n_valid);
}

namespace {

seir::ScenarioCorpus load_corpus(const std::string& file, const std::vector<std::string>& ids) {
    require_file(file, "run 'gen-corpus' first");
    auto corpus = seir::read_corpus(file);
    check_counties(file, corpus.county_ids, ids);
    return corpus;
}

}  // namespace

void Pipeline::train_cleirnet() {
    const auto& obs = observed();
    const auto config = cleir_config(config_, obs.table.size());
    std::vector<cleirnet::TrainingSequence> sequences;
    if (config_.cleirnet.train_on == "observed") {
        sequences.push_back(cleirnet::time_split(obs.series.cumulative, config.n_F, config.valid_days));
    } else {
        const auto corpus = load_corpus(path(kCorpus), obs.table.ids());
        if (corpus.days <= config.n_F + 1) throw std::invalid_argument("corpus scenarios are shorter than the horizon");
        const std::size_t bases = corpus.days - config.n_F;
        for (const auto* s : corpus.training()) sequences.push_back({s->cumulative, bases, bases});
        for (const auto* s : corpus.validation()) sequences.push_back({s->cumulative, 0, bases});
    }
    const std::size_t members = config_.cleirnet.ensemble;
    std::vector<std::optional<cleirnet::TrainResult>> results(members);
    const auto populations = obs.table.populations();
    parallel_for(members, config_.jobs, [&](std::size_t k) {
        results[k] = cleirnet::train_cleirnet(sequences, populations, obs.features, config,
                                              derive_seed(derive_seed(config_.seed, "cleirnet-member"), k));
    });
    std::ofstream log(path("cleirnet_training.csv"));
    log << "# " << stamp_ << '\n' << "member,epoch,train_loss,valid_loss,batches,skipped_batches\n";
    for (std::size_t k = 0; k < members; ++k) {
        const auto& r = *results[k];
        cleirnet::save_model(path(member_checkpoint(k)), r.model);
        record(member_checkpoint(k));
        for (const auto& e : r.log) {
            log << k << ',' << e.epoch << ',' << text::format_double(e.train_loss) << ','
                << text::format_double(e.valid_loss) << ',' << e.batches << ',' << e.skipped_batches << '\n';
        }
        spdlog::info("cleirnet member {}: best epoch {} valid loss {}", k, r.best_epoch, r.best_valid_loss);
    }
    log.close();
    record("cleirnet_training.csv");
}

void Pipeline::train_tdefsi() {
    const auto table = county_table();
    const auto corpus = load_corpus(path(kCorpus), table.ids());
    std::vector<std::pair<std::string, tdefsi::RegularizerFlags>> arms;
    for (const auto& [name, flags] : tdefsi::experiment_arms()) {
        if (std::find(config_.tdefsi.arms.begin(), config_.tdefsi.arms.end(), name) != config_.tdefsi.arms.end()) {
            arms.emplace_back(name, flags);
        }
    }
    std::vector<std::optional<tdefsi::TdefsiTrainResult>> results(arms.size());
    const auto seed = derive_seed(config_.seed, "tdefsi");
    parallel_for(arms.size(), config_.jobs, [&](std::size_t a) {
        results[a] = tdefsi::tdefsi_train(corpus, config_.tdefsi.model, arms[a].second, seed);
    });
    std::vector<tdefsi::ArmReport> rows;
    std::ofstream log(path("tdefsi_training.csv"));
    log << "# " << stamp_ << '\n' << "arm,epoch,train_mse,train_loss,valid_mse,valid_loss\n";
    for (std::size_t a = 0; a < arms.size(); ++a) {
        const auto& r = *results[a];
        const auto name = "tdefsi_" + file_label(arms[a].first) + ".ckpt";
        tdefsi::save_model(path(name), r.model, r.stats);
        record(name);
        rows.push_back(tdefsi::arm_report(arms[a].first, r));
        for (const auto& e : r.log) {
            log << arms[a].first << ',' << e.epoch << ',' << text::format_double(e.train_mse) << ','
                << text::format_double(e.train_loss) << ',' << text::format_double(e.valid_mse) << ','
                << text::format_double(e.valid_loss) << '\n';
        }
        if (r.clipped) spdlog::warn("tdefsi arm {} clipped the national exponent", arms[a].first);
        spdlog::info("tdefsi arm {}: best epoch {}", arms[a].first, r.best_epoch);
    }
    log.close();
    record("tdefsi_training.csv");
    tdefsi::write_arm_report(path("tdefsi_arms.csv"), rows, stamp_);
    record("tdefsi_arms.csv");
}

void Pipeline::forecast() {
    const auto& obs = observed();
    const auto history = obs.history();
    const std::size_t base_day = obs.history_days() - 1;
    const auto ids = obs.table.ids();
    const auto dates = obs.held_out_dates();
    auto emit = [&](const std::string& name, const ForecastFrame& frame) {
        write_forecast_csv(path(name), frame, ids, dates, stamp_);
        record(name);
    };
    emit("forecast_naive.csv", eval::naive_no_change(history, base_day, obs.horizon));
    for (const auto& model : config_.forecast.models) {
        if (model == "cleirnet") {
            std::vector<ForecastFrame> frames;
            for (std::size_t k = 0; k < config_.cleirnet.ensemble; ++k) {
                const auto file = path(member_checkpoint(k));
                require_file(file, "run 'train-cleirnet' first");
                const auto m = cleirnet::load_model(file);
                if (m.config().n_C != obs.table.size() || m.config().n_F != obs.horizon) {
                    throw DimensionError("checkpoint '" + file + "' was trained for " + std::to_string(m.config().n_C) +
                                         " counties and horizon " + std::to_string(m.config().n_F));
                }
                frames.push_back(cleirnet::forecast_cleirnet(m, history, obs.features));
                emit("forecast_cleirnet_member" + std::to_string(k) + ".csv", frames.back());
            }
            emit("forecast_cleirnet.csv", cleirnet::ensemble_forecasts(frames));
        } else if (model == "tdefsi") {
            const auto file = path("tdefsi_" + file_label(config_.forecast.tdefsi_arm) + ".ckpt");
            require_file(file, "run 'train-tdefsi' first");
            const auto [m, stats] = tdefsi::load_model(file);
            if (static_cast<std::size_t>(stats.min.size()) != obs.table.size()) {
                throw DimensionError("checkpoint '" + file + "' covers " + std::to_string(stats.min.size()) +
                                     " counties but the table has " + std::to_string(obs.table.size()));
            }
            const auto y = tdefsi::national_series(obs.series.head(obs.history_days()).incidence());
            const auto fc = tdefsi::autoregressive_forecast(m, y, obs.horizon, stats);
            emit("forecast_tdefsi.csv", tdefsi::forecast_frame(fc, history.col(history.cols() - 1), base_day));
        }
    }
}

void Pipeline::evaluate() {
    const auto& obs = observed();
    const auto ids = obs.table.ids();
    const auto truth = obs.held_out();
    const auto expected_dates = obs.held_out_dates();
    std::vector<std::string> models{"naive"};
    models.insert(models.end(), config_.forecast.models.begin(), config_.forecast.models.end());
    std::optional<ForecastFrame> naive;
    for (const auto& model : models) {
        const auto file = path("forecast_" + model + ".csv");
        require_file(file, "run 'forecast' first");
        check_counties(file, csv_county_ids(file), ids);
        std::vector<std::string> dates;
        auto frame = read_forecast_csv(file, ids, &dates);
        if (dates != expected_dates) {
            throw DimensionError("forecast '" + file + "' covers " + join(dates) + " but the held-out days are " +
                                 join(expected_dates));
        }
        frame.base_day = obs.history_days() - 1;
        const auto report = eval::compute_metrics(frame, truth, obs.table.populations());
        const std::map<std::string, std::string> metadata{{"model", model},
                                                          {"stamp", stamp_},
                                                          {"config_hash", hash_},
                                                          {"seed", std::to_string(config_.seed)},
                                                          {"version", EPIFORGE_VERSION},
                                                          {"base_day", std::to_string(frame.base_day)}};
        eval::write_metric_report(path("metrics_" + model + ".json"), report, metadata);
        record("metrics_" + model + ".json");
        if (model == "naive") {
            naive = frame;
        } else {
            const auto ranking = eval::rank_states(frame, truth, obs.table, *naive);
            eval::write_state_ranking(path("state_ranking_" + model + ".csv"), ranking, stamp_);
            record("state_ranking_" + model + ".csv");
        }
        spdlog::info("{}: mse {} weighted {}", model, report.mse, report.weighted_mse);
    }
    report();
}

void Pipeline::report() {
    std::vector<std::string> models{"naive"};
    models.insert(models.end(), config_.forecast.models.begin(), config_.forecast.models.end());
    std::vector<SummaryRow> rows;
    std::string summary_stamp;
    for (const auto& model : models) {
        const auto file = path("metrics_" + model + ".json");
        if (!fs::exists(file)) continue;
        std::map<std::string, std::string> metadata;
        auto r = eval::read_metric_report(file, &metadata);
        const auto stamp = metadata.count("stamp") ? metadata.at("stamp") : std::string();
        if (summary_stamp.empty()) summary_stamp = stamp;
        eval::write_per_day_csv(path("per_day_" + model + ".csv"), r, stamp);
        record("per_day_" + model + ".csv");
        rows.push_back({model, std::move(r)});
    }
    if (rows.empty()) throw std::runtime_error("no metric reports in '" + config_.out + "'; run 'evaluate' first");
    write_summary(path("summary.csv"), rows, summary_stamp);
    record("summary.csv");
}

void Pipeline::dependency() {
    const auto& obs = observed();
    const auto scores = dependency::score_counties(obs.history(), obs.adjacency, config_.dependency,
                                                   dependency::estimate_mi, config_.jobs);
    dependency::write_dependency_report(path("dependency.csv"), obs.table.ids(), scores, stamp_);
    record("dependency.csv");
}

void Pipeline::select() {
    const auto& obs = observed();
    const auto scores = dependency::score_counties(obs.history(), obs.adjacency, config_.dependency,
                                                   dependency::estimate_mi, config_.jobs);
    const auto keep = dependency::select_counties(scores.normalized.values, config_.select.delta);
    dependency::write_mask(path("mask.csv"), obs.table.ids(), keep, config_.select.delta, stamp_);
    record("mask.csv");
    geo::write_county_table(path("counties_selected.csv"), obs.table.subset(keep));
    record("counties_selected.csv");
    spdlog::info("delta {} removes {} of the counties", config_.select.delta, dependency::removed_fraction(keep));
}

void Pipeline::sweep_delta() {
    const auto& obs = observed();
    const auto history = obs.history();
    const auto truth = obs.held_out();
    const auto evaluate = [&](const std::vector<bool>& keep, double delta) {
        const auto kept = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
        if (kept == 0) throw std::invalid_argument("delta removes every county");
        const auto table = obs.table.subset(keep);
        auto config = cleir_config(config_, kept);
        config.max_epochs = config_.sweep.max_epochs;
        const Eigen::MatrixXd features = geo::build_feature_matrix(table).values.transpose();
        const auto populations = table.populations();
        const auto sequence = cleirnet::time_split(rows_of(obs.series.cumulative, keep), config.n_F, config.valid_days);
        const auto trained = cleirnet::train_cleirnet({sequence}, populations, features, config,
                                                      derive_seed(config_.seed, "sweep"));
        const auto frame = cleirnet::forecast_cleirnet(trained.model, rows_of(history, keep), features);
        const auto report = eval::compute_metrics(frame, rows_of(truth, keep), populations);
        spdlog::info("sweep delta {}: {} counties, mse {}", delta, kept, report.mse);
        return dependency::SweepMetrics{report.mse, report.weighted_mse};
    };
    const auto rows = dependency::delta_sweep(history, obs.adjacency, config_.dependency, config_.sweep.deltas, evaluate);
    for (const auto& r : rows) {
        if (!r.error.empty()) spdlog::warn("sweep delta {} failed: {}", r.delta, r.error);
    }
    dependency::write_sweep(path("delta_sweep.csv"), rows, stamp_);
    record("delta_sweep.csv");
}

void Pipeline::write_manifest(const std::string& command) {
    const auto file = path(kManifest);
    Json commands = Json::array();
    std::map<std::string, std::string> artifacts;
    if (fs::exists(file)) {
        try {
            std::ifstream in(file);
            const auto old = Json::parse(in);
            if (old.value("config_hash", "") == hash_) {
                commands = old.at("commands");
                artifacts = old.at("artifacts").get<std::map<std::string, std::string>>();
            } else {
                spdlog::warn("config changed; starting a fresh manifest in '{}'", config_.out);
            }
        } catch (const std::exception& e) {
            spdlog::warn("ignoring unreadable manifest '{}': {}", file, e.what());
        }
    }
    for (const auto& name : written_) artifacts[name] = sha256_file(path(name));
    commands.push_back({{"command", command}, {"timestamp", utc_timestamp()}, {"artifacts", written_}});
    Json manifest;
    manifest["tool"] = "epiforge";
    manifest["version"] = EPIFORGE_VERSION;
    manifest["config_hash"] = hash_;
    manifest["seed"] = config_.seed;
    manifest["config"] = Json::parse(config_json(config_));
    manifest["commands"] = commands;
    manifest["artifacts"] = artifacts;
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write '" + file + "'");
    out << manifest.dump(2) << '\n';
}

bool configure_logging(const std::string& level) {
    static const auto logger = [] {
        auto l = spdlog::stderr_logger_mt("epiforge");
        l->set_pattern("[%l] %v");
        spdlog::set_default_logger(l);
        return l;
    }();
    const std::map<std::string, spdlog::level::level_enum> levels{{"", spdlog::level::warn},
                                                                   {"error", spdlog::level::err},
                                                                   {"warn", spdlog::level::warn},
                                                                   {"info", spdlog::level::info},
                                                                   {"debug", spdlog::level::debug}};
    const auto it = levels.find(level);
    logger->set_level(it == levels.end() ? spdlog::level::warn : it->second);
    return it != levels.end();
}

std::string diagnostic_json(const std::exception& error, const std::string& command) {
    Json j;
    j["command"] = command;
    if (const auto* e = dynamic_cast<const ConfigError*>(&error)) {
        j["error"] = "config";
        j["problems"] = e->problems();
    } else if (const auto* e = dynamic_cast<const CountyMismatchError*>(&error)) {
        j["error"] = "county_mismatch";
        j["missing"] = e->missing();
        j["unexpected"] = e->unexpected();
    } else if (const auto* e = dynamic_cast<const UnknownIdError*>(&error)) {
        j["error"] = "unknown_id";
        j["ids"] = e->ids();
    } else if (const auto* e = dynamic_cast<const DuplicateIdError*>(&error)) {
        j["error"] = "duplicate_id";
        j["ids"] = std::vector<std::string>{e->id()};
    } else if (const auto* e = dynamic_cast<const ParseError*>(&error)) {
        j["error"] = "parse";
        j["line"] = e->line();
    } else if (const auto* e = dynamic_cast<const nn::TrainingDivergedError*>(&error)) {
        j["error"] = "training_diverged";
        j["epoch"] = e->epoch();
        j["batch"] = e->batch();
    } else if (dynamic_cast<const DimensionError*>(&error)) {
        j["error"] = "dimension";
    } else if (dynamic_cast<const MissingColumnError*>(&error)) {
        j["error"] = "missing_column";
    } else if (dynamic_cast<const std::invalid_argument*>(&error) || dynamic_cast<const std::out_of_range*>(&error)) {
        j["error"] = "invalid_argument";
    } else {
        j["error"] = "runtime";
    }
    j["message"] = error.what();
    return j.dump();
}

}  // namespace epiforge::pipeline

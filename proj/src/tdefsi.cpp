#include "epiforge/tdefsi.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "epiforge/error.hpp"
#include "epiforge/text.hpp"

namespace epiforge::tdefsi {

namespace {

using nn::Matrix;
using nn::Var;

constexpr const char* kCheckpointTag = "tdefsi-lonly-v1";

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

Var dropout_layer(Var x, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return x;
    Matrix mask(x.rows(), x.cols());
    const double keep = 1.0 - rate;
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
    return nn::mul_const(x, mask);
}

void check_stats(const TdefsiModel& model, const NormStats& stats) {
    if (stats.counties() != model.config().K) {
        throw DimensionError("norm stats cover " + std::to_string(stats.counties()) + " counties, model expects " +
                             std::to_string(model.config().K));
    }
}

}  // namespace

void TdefsiConfig::validate() const {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (H_i < 1 || H < 1) throw std::invalid_argument("H_i and H must be >= 1");
    if (lambda < 0.0 || mu < 0.0) throw std::invalid_argument("lambda and mu must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
}

std::string to_json(const TdefsiConfig& c) {
    nlohmann::ordered_json j;
    j["k"] = c.k;
    j["H_i"] = c.H_i;
    j["H"] = c.H;
    j["K"] = c.K;
    j["lambda"] = c.lambda;
    j["mu"] = c.mu;
    j["dropout"] = c.dropout;
    j["lr"] = c.lr;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["literal_phi"] = c.literal_phi;
    return j.dump();
}

TdefsiConfig config_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    TdefsiConfig c;
    c.k = j.at("k").get<std::size_t>();
    c.H_i = j.at("H_i").get<std::size_t>();
    c.H = j.at("H").get<std::size_t>();
    c.K = j.at("K").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.mu = j.at("mu").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.lr = j.at("lr").get<double>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.literal_phi = j.at("literal_phi").get<bool>();
    c.validate();
    return c;
}

std::array<std::pair<std::string, RegularizerFlags>, 4> experiment_arms() {
    return {{{"none", {false, false, false}},
             {"dropout", {true, false, false}},
             {"dropout+nonneg", {true, true, false}},
             {"dropout+nonneg+spatial", {true, true, true}}}};
}

NormStats fit_norm_stats(const std::vector<const Eigen::MatrixXd*>& incidences, std::size_t train_days) {
    if (incidences.empty()) throw std::invalid_argument("no series to fit normalization on");
    const auto K = incidences.front()->rows();
    NormStats stats;
    stats.min = Eigen::VectorXd::Constant(K, std::numeric_limits<double>::infinity());
    stats.max = Eigen::VectorXd::Constant(K, -std::numeric_limits<double>::infinity());
    bool any = false;
    for (const auto* m : incidences) {
        if (m->rows() != K) throw DimensionError("series differ in county count");
        const auto cols = train_days == 0 ? m->cols() : std::min(m->cols(), idx(train_days));
        if (cols == 0) continue;
        any = true;
        stats.min = stats.min.cwiseMin(m->leftCols(cols).rowwise().minCoeff());
        stats.max = stats.max.cwiseMax(m->leftCols(cols).rowwise().maxCoeff());
    }
    if (!any) throw std::invalid_argument("normalization window is empty");
    stats.degenerate.resize(static_cast<std::size_t>(K));
    for (Eigen::Index j = 0; j < K; ++j) stats.degenerate[static_cast<std::size_t>(j)] = !(stats.max[j] > stats.min[j]);
    return stats;
}

Eigen::MatrixXd apply_normalization(const Eigen::MatrixXd& incidence, const NormStats& stats) {
    if (incidence.rows() != idx(stats.counties())) throw DimensionError("series county count does not match norm stats");
    Eigen::MatrixXd out(incidence.rows(), incidence.cols());
    for (Eigen::Index j = 0; j < incidence.rows(); ++j) {
        if (stats.degenerate[static_cast<std::size_t>(j)]) {
            out.row(j).setZero();
        } else {
            out.row(j) = (incidence.row(j).array() - stats.min[j]) / (stats.max[j] - stats.min[j]);
        }
    }
    return out;
}

Eigen::MatrixXd denormalize(const Eigen::MatrixXd& y_prime, const NormStats& stats) {
    if (y_prime.rows() != idx(stats.counties())) throw DimensionError("series county count does not match norm stats");
    Eigen::MatrixXd out(y_prime.rows(), y_prime.cols());
    for (Eigen::Index j = 0; j < y_prime.rows(); ++j) {
        out.row(j) = (y_prime.row(j).array() * (stats.max[j] - stats.min[j]) + stats.min[j]).matrix();
    }
    return out;
}

Eigen::VectorXd national_series(const Eigen::MatrixXd& incidence) {
    Eigen::VectorXd y(incidence.cols());
    for (Eigen::Index t = 0; t < incidence.cols(); ++t) y[t] = std::log1p(std::max(0.0, incidence.col(t).sum()));
    return y;
}

NormalizedData normalize_dataset(const Eigen::MatrixXd& incidence, std::size_t train_days) {
    if (incidence.cols() < 1) throw std::invalid_argument("normalize_dataset needs at least one day");
    NormalizedData d;
    d.stats = fit_norm_stats({&incidence}, train_days);
    d.y = national_series(incidence);
    d.y_prime = apply_normalization(incidence, d.stats);
    return d;
}

TdefsiModel::TdefsiModel(TdefsiConfig config) : config_(config) {
    config_.validate();
    const auto h = idx(config_.H_i);
    for (std::size_t l = 0; l < config_.k; ++l) {
        lstm.push_back(nn::LstmCell::create(store_, "lstm" + std::to_string(l), l == 0 ? 1 : h, h));
    }
    hidden = nn::DenseLayer::create(store_, "hidden", h, idx(config_.H));
    output = nn::DenseLayer::create(store_, "output", idx(config_.H), idx(config_.K) + 1);
}

void TdefsiModel::initialize(std::uint64_t seed) { nn::glorot_init_store(store_, seed); }

std::size_t count_tdefsi_parameters(const TdefsiConfig& c) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < c.k; ++l) {
        const std::size_t in = l == 0 ? 1 : c.H_i;
        n += 4 * (in + c.H_i + 1) * c.H_i;
    }
    return n + (c.H_i + 1) * c.H + (c.H + 1) * (c.K + 1);
}

std::vector<Var> lonly_sequence(nn::Tape& tape, const TdefsiModel& model, const Eigen::VectorXd& y, Rng* dropout) {
    if (y.size() < 1) throw std::invalid_argument("input window must hold at least one day");
    const auto& cfg = model.config();
    const auto h = idx(cfg.H_i);
    std::vector<Var> hs, cs;
    for (std::size_t l = 0; l < cfg.k; ++l) {
        hs.push_back(tape.constant(Matrix::Zero(h, 1)));
        cs.push_back(tape.constant(Matrix::Zero(h, 1)));
    }
    std::vector<Var> out;
    out.reserve(static_cast<std::size_t>(y.size()));
    for (Eigen::Index t = 0; t < y.size(); ++t) {
        Var x = tape.constant(Matrix::Constant(1, 1, y[t]));
        for (std::size_t l = 0; l < cfg.k; ++l) {
            if (l > 0) x = dropout_layer(x, cfg.dropout, dropout);
            auto st = nn::lstm_cell_forward(tape, model.lstm[l], x, hs[l], cs[l]);
            hs[l] = st.h;
            cs[l] = st.c;
            x = st.h;
        }
        Var d = nn::dense_forward(tape, model.hidden, dropout_layer(x, cfg.dropout, dropout), nn::Activation::Relu);
        out.push_back(nn::dense_forward(tape, model.output, dropout_layer(d, cfg.dropout, dropout), nn::Activation::Linear));
    }
    return out;
}

Var lonly_forward(nn::Tape& tape, const TdefsiModel& model, const Eigen::VectorXd& y, Rng* dropout) {
    return lonly_sequence(tape, model, y, dropout).back();
}

Eigen::VectorXd lonly_predict(const TdefsiModel& model, const Eigen::VectorXd& y) {
    nn::Tape tape(&model.parameters());
    return lonly_forward(tape, model, y).value();
}

double phi_regularizer(const Eigen::VectorXd& z_hat, const NormStats& stats, bool literal, bool* clipped) {
    if (z_hat.size() != idx(stats.counties()) + 1) throw DimensionError("prediction length must be counties + 1");
    const double national = z_hat[0];
    if (clipped) *clipped = national > kExpClip;
    const Eigen::VectorXd counties = z_hat.tail(z_hat.size() - 1);
    const double total = literal ? counties.sum() : denormalize(counties, stats).sum();
    return std::abs(std::exp(std::min(national, kExpClip)) - total);
}

double nonneg_regularizer(const Eigen::VectorXd& z_hat) { return (-z_hat.array()).max(0.0).sum(); }

Var phi_regularizer(Var z_hat, const NormStats& stats, bool literal) {
    const auto K = idx(stats.counties());
    if (z_hat.rows() != K + 1 || z_hat.cols() != 1) throw DimensionError("prediction length must be counties + 1");
    Var national = nn::exp(nn::clamp_max(nn::slice_rows(z_hat, 0, 1), kExpClip));
    Var total;
    if (K == 0) {
        total = z_hat.tape->constant(Matrix::Zero(1, 1));
    } else if (literal) {
        total = nn::sum(nn::slice_rows(z_hat, 1, K));
    } else {
        total = nn::add_scalar(nn::weighted_sum(nn::slice_rows(z_hat, 1, K), stats.max - stats.min), stats.min.sum());
    }
    return nn::abs(nn::sub(national, total));
}

Var nonneg_regularizer(Var z_hat) { return nn::sum(nn::relu(nn::scale(z_hat, -1.0))); }

PreparedSequence prepare_sequence(const Eigen::MatrixXd& incidence, const NormStats& stats) {
    PreparedSequence seq;
    seq.y = national_series(incidence);
    seq.z.resize(incidence.rows() + 1, incidence.cols());
    seq.z.row(0) = seq.y.transpose();
    seq.z.bottomRows(incidence.rows()) = apply_normalization(incidence, stats);
    return seq;
}

LossVars sequence_loss(nn::Tape& tape, const TdefsiModel& model, const NormStats& stats, const PreparedSequence& seq,
                       const RegularizerFlags& flags, Rng* dropout) {
    check_stats(model, stats);
    const auto& cfg = model.config();
    const auto T = seq.y.size();
    if (T < 2) throw std::invalid_argument("a training sequence needs at least two days");
    if (seq.z.rows() != idx(cfg.K) + 1 || seq.z.cols() != T) throw DimensionError("target matrix must be (K+1) x T");
    auto preds = lonly_sequence(tape, model, seq.y.head(T - 1), flags.dropout ? dropout : nullptr);
    const double steps = static_cast<double>(T - 1);
    const double outputs = static_cast<double>(cfg.K + 1);
    std::vector<Var> mse_terms, loss_terms;
    std::size_t clipped = 0;
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
        Var z_hat = preds[static_cast<std::size_t>(t)];
        Var err = nn::scale(nn::sum(nn::square(nn::sub(z_hat, tape.constant(seq.z.col(t + 1))))), 1.0 / outputs);
        mse_terms.push_back(err);
        Var total = err;
        if (flags.spatial && cfg.mu > 0.0) {
            if (z_hat.value()(0, 0) > kExpClip) ++clipped;
            total = nn::add(total, nn::scale(phi_regularizer(z_hat, stats, cfg.literal_phi), cfg.mu));
        }
        if (flags.nonneg && cfg.lambda > 0.0) total = nn::add(total, nn::scale(nonneg_regularizer(z_hat), cfg.lambda));
        loss_terms.push_back(total);
    }
    Var mse = nn::scale(nn::sum(nn::concat_rows(mse_terms)), 1.0 / steps);
    Var loss = nn::scale(nn::sum(nn::concat_rows(loss_terms)), 1.0 / steps);
    return {loss, mse, clipped};
}

std::pair<double, double> tdefsi_evaluate(const TdefsiModel& model, const NormStats& stats,
                                          const std::vector<const seir::Scenario*>& scenarios,
                                          const RegularizerFlags& flags) {
    if (scenarios.empty()) throw std::invalid_argument("no scenarios to evaluate");
    RegularizerFlags eval = flags;
    eval.dropout = false;
    double mse = 0.0, loss = 0.0;
    for (const auto* s : scenarios) {
        nn::Tape tape(&model.parameters());
        auto out = sequence_loss(tape, model, stats, prepare_sequence(s->incidence, stats), eval);
        mse += out.mse.scalar();
        loss += out.loss.scalar();
    }
    const double n = static_cast<double>(scenarios.size());
    return {mse / n, loss / n};
}

TdefsiTrainResult tdefsi_train(const seir::ScenarioCorpus& corpus, TdefsiConfig config, const RegularizerFlags& flags,
                               std::uint64_t seed) {
    const auto train = corpus.training();
    const auto valid = corpus.validation();
    if (train.empty()) throw std::invalid_argument("corpus has no training scenarios");
    config.K = corpus.county_ids.size();
    config.validate();

    std::vector<const Eigen::MatrixXd*> mats;
    for (const auto* s : train) mats.push_back(&s->incidence);
    TdefsiTrainResult result{TdefsiModel(config), fit_norm_stats(mats), flags, {}, 0, false, 0};
    TdefsiModel& model = result.model;
    model.initialize(derive_seed(seed, "tdefsi-init"));
    nn::ParameterStore& store = model.parameters();
    nn::ParameterStore best = store;

    std::vector<PreparedSequence> prepared;
    for (const auto* s : train) prepared.push_back(prepare_sequence(s->incidence, result.stats));
    const nn::NadamConfig nadam{config.lr, 0.9, 0.999, 1e-8};
    const std::uint64_t shuffle_seed = derive_seed(seed, "shuffle");
    const std::uint64_t dropout_seed = derive_seed(seed, "dropout");

    std::vector<std::size_t> order(prepared.size());
    double best_score = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.next() % i]);

        TdefsiEpochLog entry;
        entry.epoch = epoch;
        for (std::size_t b = 0; b < order.size(); ++b) {
            Rng drop(derive_seed(derive_seed(dropout_seed, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(b)));
            nn::Tape tape(&store);
            auto out = sequence_loss(tape, model, result.stats, prepared[order[b]], flags, &drop);
            const double loss = out.loss.scalar();
            if (!std::isfinite(loss)) throw nn::TrainingDivergedError(epoch, b, "non-finite loss");
            result.clipped += out.clipped;
            entry.train_mse += out.mse.scalar();
            entry.train_loss += loss;
            nn::reverse_gradients(tape, out.loss);
            try {
                nn::nadam_update(store, nadam);
            } catch (const nn::NonFiniteGradientError& e) {
                throw nn::TrainingDivergedError(epoch, b, e.what());
            }
        }
        entry.train_mse /= static_cast<double>(order.size());
        entry.train_loss /= static_cast<double>(order.size());
        if (!valid.empty()) std::tie(entry.valid_mse, entry.valid_loss) = tdefsi_evaluate(model, result.stats, valid, flags);
        result.log.push_back(entry);
        const double score = valid.empty() ? entry.train_loss : entry.valid_loss;
        if (!std::isfinite(score)) throw nn::TrainingDivergedError(epoch, order.size(), "non-finite validation loss");
        if (score < best_score) {
            best_score = score;
            result.best_epoch = epoch;
            best = store;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            result.early_stopped = true;
            break;
        }
    }
    store.copy_values_from(best);
    store.reset_optimizer();
    return result;
}

TdefsiForecast autoregressive_forecast(const TdefsiModel& model, const Eigen::VectorXd& y_history, std::size_t horizon,
                                       const NormStats& stats) {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (y_history.size() < 1) throw std::invalid_argument("forecast needs at least one observed day");
    check_stats(model, stats);
    const auto& cfg = model.config();
    const auto h = idx(cfg.H_i);
    const auto& store = model.parameters();
    std::vector<Eigen::VectorXd> hs(cfg.k, Eigen::VectorXd::Zero(h)), cs(cfg.k, Eigen::VectorXd::Zero(h));
    auto step = [&](double input) {
        Eigen::VectorXd x = Eigen::VectorXd::Constant(1, input);
        for (std::size_t l = 0; l < cfg.k; ++l) {
            std::tie(hs[l], cs[l]) = nn::lstm_cell_eval(store, model.lstm[l], x, hs[l], cs[l]);
            x = hs[l];
        }
        const Eigen::VectorXd d = (store[model.hidden.weights].value * x + store[model.hidden.bias].value).cwiseMax(0.0);
        return Eigen::VectorXd(store[model.output.weights].value * d + store[model.output.bias].value);
    };
    Eigen::VectorXd z;
    for (Eigen::Index t = 0; t < y_history.size(); ++t) z = step(y_history[t]);
    TdefsiForecast f;
    const auto H = idx(horizon);
    const auto K = idx(cfg.K);
    f.national_log.resize(H);
    Eigen::MatrixXd normalized(K, H);
    for (Eigen::Index i = 0; i < H; ++i) {
        if (i > 0) z = step(f.national_log[i - 1]);
        f.national_log[i] = z[0];
        normalized.col(i) = z.tail(K);
    }
    f.national = f.national_log.array().min(kExpClip).exp() - 1.0;
    f.counties = denormalize(normalized, stats);
    return f;
}

ForecastFrame forecast_frame(const TdefsiForecast& forecast, const Eigen::VectorXd& base, std::size_t base_day) {
    if (base.size() != forecast.counties.rows()) throw DimensionError("base length does not match forecast counties");
    Eigen::MatrixXd cumulative(forecast.counties.rows(), forecast.counties.cols());
    Eigen::VectorXd running = base;
    for (Eigen::Index i = 0; i < cumulative.cols(); ++i) {
        running += forecast.counties.col(i);
        cumulative.col(i) = running;
    }
    auto frame = ForecastFrame::from_predictions(base_day, base, std::move(cumulative));
    frame.metadata["model"] = "tdefsi-lonly";
    return frame;
}

ArmReport arm_report(const std::string& arm, const TdefsiTrainResult& result) {
    if (result.log.empty()) throw std::invalid_argument("training log is empty");
    const auto& e = result.log[result.best_epoch];
    return {arm, e.train_mse, e.valid_mse, e.train_loss, e.valid_loss};
}

void write_arm_report(const std::string& path, const std::vector<ArmReport>& rows, const std::string& stamp) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    if (!stamp.empty()) out << "# " << stamp << '\n';
    out << "arm,train_mse,valid_mse,train_loss,valid_loss\n";
    for (const auto& r : rows) {
        out << text::csv_field(r.arm) << ',' << text::format_double(r.train_mse) << ',' << text::format_double(r.valid_mse)
            << ',' << text::format_double(r.train_loss) << ',' << text::format_double(r.valid_loss) << '\n';
    }
}

void save_model(const std::string& path, const TdefsiModel& model, const NormStats& stats) {
    check_stats(model, stats);
    nlohmann::ordered_json meta;
    meta["config"] = nlohmann::ordered_json::parse(to_json(model.config()));
    meta["norm_min"] = std::vector<double>(stats.min.data(), stats.min.data() + stats.min.size());
    meta["norm_max"] = std::vector<double>(stats.max.data(), stats.max.data() + stats.max.size());
    meta["national_transform"] = stats.national_transform;
    nn::save_checkpoint(path, model.parameters(), kCheckpointTag, meta.dump());
}

std::pair<TdefsiModel, NormStats> load_model(const std::string& path) {
    auto ck = nn::load_checkpoint(path);
    if (ck.tag != kCheckpointTag) throw std::runtime_error("'" + path + "' holds a '" + ck.tag + "' checkpoint, not " + kCheckpointTag);
    const auto meta = nlohmann::json::parse(ck.metadata);
    TdefsiModel model(config_from_json(meta.at("config").dump()));
    if (ck.store.size() != model.parameters().size()) throw DimensionError("checkpoint entry count does not match its config");
    for (std::size_t k = 0; k < ck.store.size(); ++k) {
        if (ck.store[k].name != model.parameters()[k].name) throw std::runtime_error("checkpoint entry '" + ck.store[k].name + "' out of order");
    }
    model.parameters().copy_values_from(ck.store);
    NormStats stats;
    const auto lo = meta.at("norm_min").get<std::vector<double>>();
    const auto hi = meta.at("norm_max").get<std::vector<double>>();
    if (lo.size() != hi.size() || lo.size() != model.config().K) throw DimensionError("checkpoint norm stats do not match K");
    stats.min = Eigen::Map<const Eigen::VectorXd>(lo.data(), idx(lo.size()));
    stats.max = Eigen::Map<const Eigen::VectorXd>(hi.data(), idx(hi.size()));
    stats.degenerate.resize(lo.size());
    for (std::size_t j = 0; j < lo.size(); ++j) stats.degenerate[j] = !(hi[j] > lo[j]);
    stats.national_transform = meta.at("national_transform").get<std::string>();
    return {std::move(model), std::move(stats)};
}

}  // namespace epiforge::tdefsi

#include "epiforge/cleirnet.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"

#include "epiforge/error.hpp"
#include "epiforge/random.hpp"

namespace epiforge::cleirnet {

namespace {

using nn::Matrix;
using nn::Var;

constexpr const char* kCheckpointTag = "cleirnet-v1";

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

bool regularized(const std::string& name) {
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".W_h") == 0) return true;
    return name.rfind("td.", 0) == 0 || name.rfind("cd", 0) == 0;
}

void require_finite(const Var& v, const char* layer) {
    if (!v.value().allFinite()) throw NonFiniteActivationError(std::string("layer '") + layer + "' produced non-finite values");
}

void check_inputs(const CleirModel& model, const Eigen::VectorXd& cases, const BackboneState& state,
                  const Eigen::MatrixXd& features) {
    const auto& cfg = model.config();
    if (cases.size() != idx(cfg.n_C)) {
        throw DimensionError("case vector has " + std::to_string(cases.size()) + " entries, model expects " + std::to_string(cfg.n_C));
    }
    const auto w = idx(cfg.n_TF);
    if (state.h0.size() != w || state.c0.size() != w || state.h1.size() != w || state.c1.size() != w) {
        throw DimensionError("backbone state width does not match n_TF");
    }
    if (cfg.variant == Variant::II && cfg.n_X > 0 && (features.rows() != idx(cfg.n_X) || features.cols() != idx(cfg.n_C))) {
        throw DimensionError("county features must be n_X x n_C (" + std::to_string(cfg.n_X) + "x" + std::to_string(cfg.n_C) + ")");
    }
}

}  // namespace

void CleirConfig::validate() const {
    if (n_C < 1 || n_TF < 1 || n_D < 1 || n_F < 1) throw std::invalid_argument("n_C, n_TF, n_D and n_F must be >= 1");
    if (!(target_dropout >= 0.0 && target_dropout < 1.0)) throw std::invalid_argument("target_dropout must be in [0, 1)");
    if (l1 < 0.0 || l2 < 0.0) throw std::invalid_argument("l1 and l2 must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (!(output_scale >= 0.0) || !std::isfinite(output_scale)) throw std::invalid_argument("output_scale must be finite and >= 0");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
}

std::string to_json(const CleirConfig& c) {
    nlohmann::ordered_json j;
    j["n_C"] = c.n_C;
    j["n_TF"] = c.n_TF;
    j["n_D"] = c.n_D;
    j["n_X"] = c.n_X;
    j["n_F"] = c.n_F;
    j["variant"] = c.variant == Variant::I ? "I" : "II";
    j["target_dropout"] = c.target_dropout;
    j["l1"] = c.l1;
    j["l2"] = c.l2;
    j["lr"] = c.lr;
    j["patience"] = c.patience;
    j["max_epochs"] = c.max_epochs;
    j["output_scale"] = c.output_scale;
    j["carry_state"] = c.carry_state;
    j["valid_days"] = c.valid_days;
    return j.dump();
}

CleirConfig config_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    CleirConfig c;
    c.n_C = j.at("n_C").get<std::size_t>();
    c.n_TF = j.at("n_TF").get<std::size_t>();
    c.n_D = j.at("n_D").get<std::size_t>();
    c.n_X = j.at("n_X").get<std::size_t>();
    c.n_F = j.at("n_F").get<std::size_t>();
    const auto variant = j.at("variant").get<std::string>();
    if (variant != "I" && variant != "II") throw std::invalid_argument("variant must be I or II");
    c.variant = variant == "I" ? Variant::I : Variant::II;
    c.target_dropout = j.at("target_dropout").get<double>();
    c.l1 = j.at("l1").get<double>();
    c.l2 = j.at("l2").get<double>();
    c.lr = j.at("lr").get<double>();
    c.patience = j.at("patience").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.output_scale = j.at("output_scale").get<double>();
    c.carry_state = j.at("carry_state").get<bool>();
    c.valid_days = j.at("valid_days").get<std::size_t>();
    c.validate();
    return c;
}

std::size_t count_parameters(const CleirConfig& c) {
    const std::size_t tf = c.n_TF;
    std::size_t n = 4 * (2 + tf + 1) * tf + 2 * 4 * (tf + tf + 1) * tf + (tf + 1) * c.n_C;
    if (c.variant == Variant::II) n += (c.n_X + 2) * c.n_D + (c.n_D + 1) * c.n_D + (c.n_D + 1);
    return n;
}

CleirModel::CleirModel(CleirConfig config) : config_(config) {
    config_.validate();
    const auto tf = idx(config_.n_TF);
    encode = nn::LstmCell::create(store_, "encode", 2, tf);
    remember = nn::LstmCell::create(store_, "remember", tf, tf);
    forecast = nn::LstmCell::create(store_, "forecast", tf, tf);
    time_distributed = nn::DenseLayer::create(store_, "td", tf, idx(config_.n_C));
    if (config_.variant == Variant::II) {
        const auto d = idx(config_.n_D);
        county_distributed[0] = nn::DenseLayer::create(store_, "cd0", idx(config_.n_X) + 1, d);
        county_distributed[1] = nn::DenseLayer::create(store_, "cd1", d, d);
        county_distributed[2] = nn::DenseLayer::create(store_, "cd2", d, 1);
    }
}

void CleirModel::initialize(std::uint64_t seed) { nn::glorot_init_store(store_, seed); }

BackboneState BackboneState::zero(std::size_t width) {
    const auto w = idx(width);
    return {Eigen::VectorXd::Zero(w), Eigen::VectorXd::Zero(w), Eigen::VectorXd::Zero(w), Eigen::VectorXd::Zero(w)};
}

HorizonVars forward_horizon(nn::Tape& tape, const CleirModel& model, const Eigen::VectorXd& cases, double day,
                            const BackboneState& state, const Eigen::MatrixXd& features) {
    check_inputs(model, cases, state, features);
    const auto& cfg = model.config();
    const auto n_C = idx(cfg.n_C);
    const auto n_F = idx(cfg.n_F);

    Matrix encode_input(2, 1);
    encode_input << std::log1p(std::max(0.0, cases.sum())), day / 365.0;
    auto enc = nn::lstm_cell_forward(tape, model.encode, tape.constant(encode_input), tape.constant(state.h0),
                                     tape.constant(state.c0));
    require_finite(enc.h, "encode");
    auto rem = nn::lstm_cell_forward(tape, model.remember, enc.h, tape.constant(state.h1), tape.constant(state.c1));
    require_finite(rem.h, "remember");

    Var h = rem.h;
    Var c = rem.c;
    std::vector<Var> vertebrae;
    vertebrae.reserve(cfg.n_F);
    for (Eigen::Index i = 0; i < n_F; ++i) {
        auto st = nn::lstm_cell_forward(tape, model.forecast, h, h, c);
        h = st.h;
        c = st.c;
        vertebrae.push_back(h);
    }
    require_finite(h, "forecast");

    Var td = nn::dense_forward(tape, model.time_distributed, nn::concat_cols(vertebrae), nn::Activation::Linear);
    require_finite(td, "time_distributed");

    Var raw = td;
    if (cfg.variant == Variant::II) {
        Var row = nn::reshape(td, 1, n_C * n_F);
        Var input = row;
        if (cfg.n_X > 0) {
            Matrix tiled(features.rows(), n_C * n_F);
            for (Eigen::Index i = 0; i < n_F; ++i) tiled.middleCols(i * n_C, n_C) = features;
            input = nn::concat_rows({row, tape.constant(std::move(tiled))});
        }
        Var a = nn::dense_forward(tape, model.county_distributed[0], input, nn::Activation::Relu);
        Var b = nn::dense_forward(tape, model.county_distributed[1], a, nn::Activation::Relu);
        Var out = nn::dense_forward(tape, model.county_distributed[2], b, nn::Activation::Linear);
        require_finite(out, "county_distributed");
        raw = nn::reshape(out, n_C, n_F);
    }
    Var deltas = nn::scale(raw, cfg.output_scale > 0.0 ? cfg.output_scale : 1.0);
    Var predictions = nn::cumulative_chain(tape.constant(cases), deltas);

    BackboneState next{enc.h.value().col(0), enc.c.value().col(0), rem.h.value().col(0), rem.c.value().col(0)};
    return {predictions, deltas, std::move(next)};
}

std::pair<ForecastFrame, BackboneState> forward_horizon(const CleirModel& model, const Eigen::VectorXd& cases,
                                                        double day, const BackboneState& state,
                                                        const Eigen::MatrixXd& features, std::size_t base_day) {
    nn::Tape tape(&model.parameters());
    auto out = forward_horizon(tape, model, cases, day, state, features);
    auto frame = ForecastFrame::from_predictions(base_day, cases, out.predictions.value());
    frame.metadata["model"] = "cleirnet";
    frame.metadata["variant"] = model.config().variant == Variant::I ? "I" : "II";
    return {std::move(frame), std::move(out.next)};
}

double loss_weight(double population, double day_index) {
    return 1.0 / (std::log(population + 1.0) * std::log(day_index + 1.0));
}

Eigen::MatrixXd loss_weights(const Eigen::VectorXd& populations, std::size_t horizon) {
    Eigen::MatrixXd w(populations.size(), idx(horizon));
    for (Eigen::Index j = 0; j < populations.size(); ++j) {
        for (Eigen::Index i = 0; i < idx(horizon); ++i) w(j, i) = loss_weight(populations[j], static_cast<double>(i + 1));
    }
    return w;
}

std::optional<double> weighted_mse_loss(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets,
                                        const Eigen::VectorXd& populations, const Eigen::MatrixXd& mask) {
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols() || mask.rows() != targets.rows() ||
        mask.cols() != targets.cols() || populations.size() != targets.rows()) {
        throw DimensionError("weighted_mse_loss: shape mismatch");
    }
    const double total = mask.sum();
    if (total == 0.0) return std::nullopt;
    const Eigen::MatrixXd w = loss_weights(populations, static_cast<std::size_t>(targets.cols()));
    return (mask.array() * w.array() * (predictions - targets).array().square()).sum() / total;
}

Eigen::MatrixXd target_dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
    Eigen::MatrixXd mask(rows, cols);
    if (rate == 0.0) {
        mask.setOnes();
        return mask;
    }
    Rng rng(seed);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = rng.bernoulli(rate) ? 0.0 : 1.0;
    }
    return mask;
}

TrainingSequence time_split(const Eigen::MatrixXd& cumulative, std::size_t horizon, std::size_t valid_days) {
    const std::size_t days = static_cast<std::size_t>(cumulative.cols());
    if (days < 2 * horizon + valid_days + 1) {
        throw std::invalid_argument("series of " + std::to_string(days) + " days is too short for horizon " +
                                    std::to_string(horizon) + " with " + std::to_string(valid_days) + " validation days");
    }
    const std::size_t fit = days - horizon;
    TrainingSequence seq;
    seq.cumulative = cumulative.leftCols(idx(fit));
    seq.valid_end = fit - horizon;
    seq.train_end = seq.valid_end - valid_days;
    return seq;
}

std::size_t first_case_day(const Eigen::MatrixXd& cumulative) {
    for (Eigen::Index d = 0; d < cumulative.cols(); ++d) {
        if (cumulative.col(d).sum() > 0.0) return static_cast<std::size_t>(d);
    }
    return 0;
}

double derive_output_scale(const std::vector<TrainingSequence>& sequences, std::size_t horizon) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : sequences) {
        const auto last = std::min<Eigen::Index>(s.cumulative.cols(), idx(s.train_end + horizon + 1));
        for (Eigen::Index d = 1; d < last; ++d) {
            sum += (s.cumulative.col(d) - s.cumulative.col(d - 1)).squaredNorm();
            n += static_cast<std::size_t>(s.cumulative.rows());
        }
    }
    if (n == 0) return 1.0;
    return std::max(1.0, std::sqrt(sum / static_cast<double>(n)));
}

namespace {

void check_sequences(const std::vector<TrainingSequence>& sequences, const CleirConfig& cfg,
                     const Eigen::VectorXd& populations) {
    if (populations.size() != idx(cfg.n_C)) throw DimensionError("population vector length does not match n_C");
    for (const auto& s : sequences) {
        if (s.cumulative.rows() != idx(cfg.n_C)) throw DimensionError("training sequence county count does not match n_C");
        if (s.train_end > s.valid_end) throw std::invalid_argument("training sequence has train_end > valid_end");
        if (s.valid_end > 0 && s.valid_end - 1 + cfg.n_F >= static_cast<std::size_t>(s.cumulative.cols())) {
            throw std::invalid_argument("training sequence base days run past its targets");
        }
    }
}

double day_input(std::size_t base_day, std::size_t first_case) {
    return base_day > first_case ? static_cast<double>(base_day - first_case) : 0.0;
}

}  // namespace

double validation_loss(const CleirModel& model, const std::vector<TrainingSequence>& sequences,
                       const Eigen::VectorXd& populations, const Eigen::MatrixXd& features) {
    const auto& cfg = model.config();
    check_sequences(sequences, cfg, populations);
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(idx(cfg.n_C), idx(cfg.n_F));
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& seq : sequences) {
        if (seq.valid_end == seq.train_end) continue;
        const std::size_t offset = first_case_day(seq.cumulative);
        BackboneState state = BackboneState::zero(cfg.n_TF);
        const std::size_t start = cfg.carry_state ? 0 : seq.train_end;
        for (std::size_t t = start; t < seq.valid_end; ++t) {
            if (!cfg.carry_state) state = BackboneState::zero(cfg.n_TF);
            auto [frame, next] = forward_horizon(model, seq.cumulative.col(idx(t)), day_input(t, offset), state, features, t);
            state = std::move(next);
            if (t < seq.train_end) continue;
            const Eigen::MatrixXd target = seq.cumulative.middleCols(idx(t + 1), idx(cfg.n_F));
            total += *weighted_mse_loss(frame.predictions, target, populations, ones);
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("no validation base days");
    return total / static_cast<double>(count);
}

TrainResult train_cleirnet(const std::vector<TrainingSequence>& sequences, const Eigen::VectorXd& populations,
                           const Eigen::MatrixXd& features, CleirConfig config, std::uint64_t seed) {
    config.validate();
    check_sequences(sequences, config, populations);
    if (config.output_scale == 0.0) config.output_scale = derive_output_scale(sequences, config.n_F);

    TrainResult result{CleirModel(config), {}, 0, std::numeric_limits<double>::infinity(), false};
    CleirModel& model = result.model;
    model.initialize(derive_seed(seed, "cleirnet-init"));
    nn::ParameterStore& store = model.parameters();
    nn::ParameterStore best = store;
    const Eigen::MatrixXd weights = loss_weights(populations, config.n_F);
    const std::uint64_t dropout_seed = derive_seed(seed, "target-dropout");
    const nn::NadamConfig nadam{config.lr, 0.9, 0.999, 1e-8};

    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        EpochLog entry;
        entry.epoch = epoch;
        double loss_sum = 0.0;
        std::size_t batch = 0;
        for (std::size_t s = 0; s < sequences.size(); ++s) {
            const auto& seq = sequences[s];
            const std::size_t offset = first_case_day(seq.cumulative);
            BackboneState state = BackboneState::zero(config.n_TF);
            for (std::size_t t = 0; t < seq.train_end; ++t, ++batch) {
                if (!config.carry_state) state = BackboneState::zero(config.n_TF);
                nn::Tape tape(&store);
                auto out = forward_horizon(tape, model, seq.cumulative.col(idx(t)), day_input(t, offset), state, features);
                state = out.next;
                const Eigen::MatrixXd mask = target_dropout_mask(
                    idx(config.n_C), idx(config.n_F), config.target_dropout,
                    derive_seed(derive_seed(dropout_seed, static_cast<std::uint64_t>(epoch)), (static_cast<std::uint64_t>(s) << 32) | t));
                const double kept = mask.sum();
                if (kept == 0.0) {
                    ++entry.skipped_batches;
                    continue;
                }
                const Eigen::MatrixXd target = seq.cumulative.middleCols(idx(t + 1), idx(config.n_F));
                Var loss = nn::weighted_sum(nn::square(nn::sub(out.predictions, tape.constant(target))),
                                            (weights.array() * mask.array()).matrix() / kept);
                const double value = loss.scalar();
                if (!std::isfinite(value)) throw TrainingDivergedError(epoch, batch, "non-finite loss");
                nn::reverse_gradients(tape, loss);
                const double penalty = nn::regularization_penalty(store, config.l1, config.l2, regularized);
                try {
                    nn::nadam_update(store, nadam);
                } catch (const nn::NonFiniteGradientError& e) {
                    throw TrainingDivergedError(epoch, batch, e.what());
                }
                loss_sum += value + penalty;
                ++entry.batches;
            }
        }
        entry.train_loss = entry.batches > 0 ? loss_sum / static_cast<double>(entry.batches) : 0.0;
        entry.valid_loss = validation_loss(model, sequences, populations, features);
        if (!std::isfinite(entry.valid_loss)) throw TrainingDivergedError(epoch, batch, "non-finite validation loss");
        result.log.push_back(entry);
        if (entry.valid_loss < result.best_valid_loss) {
            result.best_valid_loss = entry.valid_loss;
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

ForecastFrame forecast_cleirnet(const CleirModel& model, const Eigen::MatrixXd& cumulative,
                                const Eigen::MatrixXd& features) {
    const auto& cfg = model.config();
    if (cumulative.cols() < 1) throw std::invalid_argument("forecast needs at least one observed day");
    if (cumulative.rows() != idx(cfg.n_C)) throw DimensionError("series county count does not match n_C");
    const std::size_t days = static_cast<std::size_t>(cumulative.cols());
    const std::size_t offset = first_case_day(cumulative);
    BackboneState state = BackboneState::zero(cfg.n_TF);
    const std::size_t start = cfg.carry_state ? 0 : days - 1;
    for (std::size_t t = start; t + 1 < days; ++t) {
        state = forward_horizon(model, cumulative.col(idx(t)), day_input(t, offset), state, features, t).second;
    }
    auto frame = forward_horizon(model, cumulative.col(idx(days - 1)), day_input(days - 1, offset), state, features, days - 1).first;
    frame.metadata["config"] = to_json(cfg);
    return frame;
}

ForecastFrame ensemble_forecasts(const std::vector<ForecastFrame>& frames) {
    if (frames.empty()) throw std::invalid_argument("ensemble of no frames");
    const auto& first = frames.front();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(first.predictions.rows(), first.predictions.cols());
    for (const auto& f : frames) {
        if (f.predictions.rows() != first.predictions.rows() || f.predictions.cols() != first.predictions.cols()) {
            throw DimensionError("ensemble members differ in shape");
        }
        if (f.base_day != first.base_day) throw std::invalid_argument("ensemble members differ in base day");
        sum += f.predictions;
    }
    if (frames.size() == 1) return first;
    auto out = ForecastFrame::from_predictions(first.base_day, first.base, sum / static_cast<double>(frames.size()));
    out.metadata["model"] = "ensemble";
    out.metadata["members"] = std::to_string(frames.size());
    return out;
}

void save_model(const std::string& path, const CleirModel& model) {
    nn::save_checkpoint(path, model.parameters(), kCheckpointTag, to_json(model.config()));
}

CleirModel load_model(const std::string& path) {
    auto ck = nn::load_checkpoint(path);
    if (ck.tag != kCheckpointTag) throw std::runtime_error("'" + path + "' holds a '" + ck.tag + "' checkpoint, not " + kCheckpointTag);
    CleirModel model(config_from_json(ck.metadata));
    if (ck.store.size() != model.parameters().size()) throw DimensionError("checkpoint entry count does not match its config");
    for (std::size_t k = 0; k < ck.store.size(); ++k) {
        if (ck.store[k].name != model.parameters()[k].name) throw std::runtime_error("checkpoint entry '" + ck.store[k].name + "' out of order");
    }
    model.parameters().copy_values_from(ck.store);
    return model;
}

}  // namespace epiforge::cleirnet

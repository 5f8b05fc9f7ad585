#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/forecast.hpp"
#include "epiforge/nn.hpp"
#include "epiforge/random.hpp"
#include "epiforge/seir.hpp"

namespace epiforge::tdefsi {

struct TdefsiConfig {
    std::size_t k = 2;          ///< stacked LSTM layers
    std::size_t H_i = 16;       ///< width of every LSTM layer
    std::size_t H = 32;         ///< dense width
    std::size_t K = 1;          ///< counties
    double lambda = 0.01;       ///< non-negativity weight
    double mu = 0.0001;         ///< spatial consistency weight
    double dropout = 0.1;
    double lr = 0.001;
    std::size_t max_epochs = 300;
    std::size_t patience = 50;
    /// Sum normalized county outputs in the spatial term instead of raw-scale ones.
    bool literal_phi = false;

    void validate() const;
};

std::string to_json(const TdefsiConfig& config);
TdefsiConfig config_from_json(const std::string& json);

/// Which optional terms a training run uses.
struct RegularizerFlags {
    bool dropout = false;
    bool nonneg = false;
    bool spatial = false;
};

/// none, dropout, dropout+nonneg, dropout+nonneg+spatial.
std::array<std::pair<std::string, RegularizerFlags>, 4> experiment_arms();

/// Per-county min-max scaling of the training window.
struct NormStats {
    Eigen::VectorXd min;
    Eigen::VectorXd max;
    std::vector<bool> degenerate;  ///< zero range; such counties normalize to 0
    std::string national_transform = "ln1p_sum";

    std::size_t counties() const noexcept { return static_cast<std::size_t>(min.size()); }
};

/// Stats over the first `train_days` columns of every matrix (all columns when 0).
NormStats fit_norm_stats(const std::vector<const Eigen::MatrixXd*>& incidences, std::size_t train_days = 0);

struct NormalizedData {
    Eigen::VectorXd y;        ///< ln(1 + national incidence) per day
    Eigen::MatrixXd y_prime;  ///< K x T min-max scaled incidence
    NormStats stats;
};

/// Fits stats on the first `train_days` columns (all when 0) and normalizes the whole series.
NormalizedData normalize_dataset(const Eigen::MatrixXd& incidence, std::size_t train_days = 0);
Eigen::MatrixXd apply_normalization(const Eigen::MatrixXd& incidence, const NormStats& stats);
Eigen::MatrixXd denormalize(const Eigen::MatrixXd& y_prime, const NormStats& stats);
Eigen::VectorXd national_series(const Eigen::MatrixXd& incidence);

class TdefsiModel {
public:
    explicit TdefsiModel(TdefsiConfig config);

    const TdefsiConfig& config() const noexcept { return config_; }
    nn::ParameterStore& parameters() noexcept { return store_; }
    const nn::ParameterStore& parameters() const noexcept { return store_; }

    void initialize(std::uint64_t seed);

    std::vector<nn::LstmCell> lstm;
    nn::DenseLayer hidden;
    nn::DenseLayer output;

private:
    TdefsiConfig config_;
    nn::ParameterStore store_;
};

std::size_t count_tdefsi_parameters(const TdefsiConfig& config);

/// Runs the LSTM stack over `y` and applies the head after every step. Element t is
/// the (K+1) x 1 prediction made after consuming y[0..t]: row 0 is the national log
/// value, rows 1..K the normalized counties. Dropout is applied between consecutive
/// layers when `dropout` is non-null.
std::vector<nn::Var> lonly_sequence(nn::Tape& tape, const TdefsiModel& model, const Eigen::VectorXd& y,
                                    Rng* dropout = nullptr);

/// Prediction after the whole window.
nn::Var lonly_forward(nn::Tape& tape, const TdefsiModel& model, const Eigen::VectorXd& y, Rng* dropout = nullptr);

/// Evaluation-mode prediction after the whole window.
Eigen::VectorXd lonly_predict(const TdefsiModel& model, const Eigen::VectorXd& y);

inline constexpr double kExpClip = 50.0;

/// |exp(min(y_hat, 50)) - sum of county outputs|, counties denormalized unless `literal`.
double phi_regularizer(const Eigen::VectorXd& z_hat, const NormStats& stats, bool literal = false,
                       bool* clipped = nullptr);
/// Sum of max(0, -z_i).
double nonneg_regularizer(const Eigen::VectorXd& z_hat);

nn::Var phi_regularizer(nn::Var z_hat, const NormStats& stats, bool literal);
nn::Var nonneg_regularizer(nn::Var z_hat);

/// Inputs and one-step-ahead targets of one series.
struct PreparedSequence {
    Eigen::VectorXd y;  ///< T national log values
    Eigen::MatrixXd z;  ///< (K+1) x T targets, row 0 = y
};

PreparedSequence prepare_sequence(const Eigen::MatrixXd& incidence, const NormStats& stats);

struct LossVars {
    nn::Var loss;  ///< mean over steps of (MSE + mu*phi + lambda*delta)
    nn::Var mse;   ///< mean over steps and outputs of the squared error
    std::size_t clipped = 0;
};

/// Consumes y[0..T-2] and scores predictions against z[:, 1..T-1].
LossVars sequence_loss(nn::Tape& tape, const TdefsiModel& model, const NormStats& stats, const PreparedSequence& seq,
                       const RegularizerFlags& flags, Rng* dropout = nullptr);

struct TdefsiEpochLog {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double train_loss = 0.0;
    double valid_mse = 0.0;
    double valid_loss = 0.0;
};

struct TdefsiTrainResult {
    TdefsiModel model;
    NormStats stats;
    RegularizerFlags flags;
    std::vector<TdefsiEpochLog> log;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
    std::size_t clipped = 0;
};

/// One update per training scenario, scenarios shuffled each epoch. Early stopping
/// watches the validation loss (training loss when there are no validation scenarios)
/// and restores the best weights.
TdefsiTrainResult tdefsi_train(const seir::ScenarioCorpus& corpus, TdefsiConfig config, const RegularizerFlags& flags,
                               std::uint64_t seed);

/// Evaluation-mode (mse, loss) averaged over scenarios.
std::pair<double, double> tdefsi_evaluate(const TdefsiModel& model, const NormStats& stats,
                                          const std::vector<const seir::Scenario*>& scenarios,
                                          const RegularizerFlags& flags);

struct TdefsiForecast {
    Eigen::VectorXd national_log;  ///< horizon
    Eigen::VectorXd national;      ///< exp(national_log) - 1
    Eigen::MatrixXd counties;      ///< K x horizon, denormalized incidence
};

/// Feeds each national prediction back as the next input.
TdefsiForecast autoregressive_forecast(const TdefsiModel& model, const Eigen::VectorXd& y_history,
                                       std::size_t horizon, const NormStats& stats);

/// Cumulative frame: base plus the running sum of county incidence forecasts.
ForecastFrame forecast_frame(const TdefsiForecast& forecast, const Eigen::VectorXd& base, std::size_t base_day);

struct ArmReport {
    std::string arm;
    double train_mse = 0.0;
    double valid_mse = 0.0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
};

/// Row taken from the restored (best) epoch.
ArmReport arm_report(const std::string& arm, const TdefsiTrainResult& result);
void write_arm_report(const std::string& path, const std::vector<ArmReport>& rows, const std::string& stamp = {});

/// Checkpoint tag "tdefsi-lonly-v1"; metadata holds the config and norm stats.
void save_model(const std::string& path, const TdefsiModel& model, const NormStats& stats);
std::pair<TdefsiModel, NormStats> load_model(const std::string& path);

}  // namespace epiforge::tdefsi

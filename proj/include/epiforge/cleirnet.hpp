#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/forecast.hpp"
#include "epiforge/nn.hpp"

namespace epiforge::cleirnet {

/// Variant I predicts deltas straight from the time-distributed layer; Variant II adds
/// the county-distributed head.
enum class Variant { I, II };

struct CleirConfig {
    std::size_t n_C = 1;   ///< counties
    std::size_t n_TF = 2;  ///< backbone width
    std::size_t n_D = 24;  ///< county-distributed hidden units
    std::size_t n_X = 6;   ///< static county features
    std::size_t n_F = 14;  ///< horizon
    Variant variant = Variant::II;
    double target_dropout = 0.25;
    double l1 = 5e-5;
    double l2 = 5e-5;
    double lr = 0.001;
    std::size_t patience = 30;
    std::size_t max_epochs = 300;
    /// Multiplier applied to the network's delta output. 0 derives it from the
    /// training data (root mean square daily increase, at least 1).
    double output_scale = 0.0;
    bool carry_state = true;
    /// Trailing base days of the fit window used for early stopping.
    std::size_t valid_days = 1;

    void validate() const;
};

std::string to_json(const CleirConfig& config);
CleirConfig config_from_json(const std::string& json);

/// Closed-form trainable parameter count for the configured variant.
std::size_t count_parameters(const CleirConfig& config);

class CleirModel {
public:
    explicit CleirModel(CleirConfig config);

    const CleirConfig& config() const noexcept { return config_; }
    nn::ParameterStore& parameters() noexcept { return store_; }
    const nn::ParameterStore& parameters() const noexcept { return store_; }

    /// Glorot weights, zero biases.
    void initialize(std::uint64_t seed);

    nn::LstmCell encode;
    nn::LstmCell remember;
    nn::LstmCell forecast;
    nn::DenseLayer time_distributed;
    std::array<nn::DenseLayer, 3> county_distributed{};

private:
    CleirConfig config_;
    nn::ParameterStore store_;
};

/// Encode and remember cell states carried between sequential batches.
struct BackboneState {
    Eigen::VectorXd h0, c0;
    Eigen::VectorXd h1, c1;

    static BackboneState zero(std::size_t width);
};

class NonFiniteActivationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct HorizonVars {
    nn::Var predictions;  ///< n_C x n_F cumulative
    nn::Var deltas;       ///< n_C x n_F
    BackboneState next;
};

/// Records one horizon on `tape`. `cases` is I(t), `day` is days since the first
/// national case, `features` is n_X x n_C. Incoming state is treated as constant.
HorizonVars forward_horizon(nn::Tape& tape, const CleirModel& model, const Eigen::VectorXd& cases, double day,
                            const BackboneState& state, const Eigen::MatrixXd& features);

/// Evaluation-only forward pass returning a frame and the next state.
std::pair<ForecastFrame, BackboneState> forward_horizon(const CleirModel& model, const Eigen::VectorXd& cases,
                                                        double day, const BackboneState& state,
                                                        const Eigen::MatrixXd& features, std::size_t base_day = 0);

/// w = 1 / (ln(population + 1) * ln(day_index + 1)) with day_index counted from 1.
double loss_weight(double population, double day_index);
Eigen::MatrixXd loss_weights(const Eigen::VectorXd& populations, std::size_t horizon);

/// Masked mean of w * (pred - target)^2; nullopt when every entry is masked.
std::optional<double> weighted_mse_loss(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets,
                                        const Eigen::VectorXd& populations, const Eigen::MatrixXd& mask);

/// Each entry is 0 with probability `rate`, independently; deterministic per seed.
Eigen::MatrixXd target_dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed);

/// One cumulative series with base-day ranges. Base day t forecasts t+1..t+n_F, so every
/// base day used must satisfy t + n_F < cumulative.cols().
struct TrainingSequence {
    Eigen::MatrixXd cumulative;  ///< n_C x days
    std::size_t train_end = 0;   ///< base days [0, train_end) drive updates
    std::size_t valid_end = 0;   ///< base days [train_end, valid_end) score validation
};

/// Fit window is everything but the final n_F days; its last `valid_days` base days
/// with complete targets are held for validation.
TrainingSequence time_split(const Eigen::MatrixXd& cumulative, std::size_t horizon, std::size_t valid_days);

/// First day on which the national total is positive (0 for an all-zero series).
std::size_t first_case_day(const Eigen::MatrixXd& cumulative);

/// Root mean square of day-over-day increases over the training targets, at least 1.
double derive_output_scale(const std::vector<TrainingSequence>& sequences, std::size_t horizon);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    std::size_t batches = 0;
    std::size_t skipped_batches = 0;
};

using nn::TrainingDivergedError;

struct TrainResult {
    CleirModel model;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_valid_loss = 0.0;
    bool early_stopped = false;
};

/// Sequential batch-size-1 training with carried, detached states; restores the
/// best-validation weights.
TrainResult train_cleirnet(const std::vector<TrainingSequence>& sequences, const Eigen::VectorXd& populations,
                           const Eigen::MatrixXd& features, CleirConfig config, std::uint64_t seed);

/// Replays every sequence from zero state and averages the unmasked weighted MSE over
/// the validation base days.
double validation_loss(const CleirModel& model, const std::vector<TrainingSequence>& sequences,
                       const Eigen::VectorXd& populations, const Eigen::MatrixXd& features);

/// Replays the whole series from zero state and returns the forecast from its last day.
ForecastFrame forecast_cleirnet(const CleirModel& model, const Eigen::MatrixXd& cumulative,
                                const Eigen::MatrixXd& features);

/// Elementwise mean of cumulative predictions; deltas recomputed from the mean.
ForecastFrame ensemble_forecasts(const std::vector<ForecastFrame>& frames);

/// Checkpoint tag "cleirnet-v1" with the config as metadata JSON.
void save_model(const std::string& path, const CleirModel& model);
CleirModel load_model(const std::string& path);

}  // namespace epiforge::cleirnet

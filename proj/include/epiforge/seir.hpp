#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/geo.hpp"

namespace epiforge::seir {

/// Column order of a CompartmentMatrix.
enum Compartment : Eigen::Index { S = 0, E = 1, I = 2, R = 3 };

struct SeirParams {
    double beta = 0.0;
    double sigma = 0.0;
    double gamma = 0.0;
};

struct MixParams {
    double mu_flow = 1.0;
    double mu_spread = 1.0;
    double sigma = 0.0;
    double gamma = 0.0;
    double lambda_E = 0.0;
    double lambda_I = 0.0;
};

void validate(const MixParams& params);

using State4 = std::array<double, 4>;

/// Single-population SEIR right-hand side. Throws std::domain_error when N <= 0.
State4 seir_derivative(const State4& state, const SeirParams& params, double N);

/// Counties x 4 populations, columns (S, E, I, R).
struct CompartmentMatrix {
    Eigen::MatrixXd values;

    std::size_t counties() const noexcept { return static_cast<std::size_t>(values.rows()); }
    Eigen::VectorXd totals() const { return values.rowwise().sum(); }
    /// I + R per county.
    Eigen::VectorXd recorded() const { return values.col(I) + values.col(R); }
};

struct FlowMatrix {
    Eigen::MatrixXd raw;
    Eigen::MatrixXd balanced;

    std::size_t counties() const noexcept { return static_cast<std::size_t>(raw.rows()); }
    static FlowMatrix zero(std::size_t counties);
};

/// F^bal = F - diag(1^T F). Throws std::invalid_argument naming the largest asymmetry.
Eigen::MatrixXd balance_flow(const Eigen::MatrixXd& raw);

/// f_ij = min(p_i, p_j) / (d_ij * mu_flow); entries below `sparsity_epsilon` are dropped.
FlowMatrix build_flow_matrix(const geo::CountyTable& table, const Eigen::MatrixXd& distances, double mu_flow,
                             double sparsity_epsilon = 0.0);

/// beta_i = density_i / mu_spread.
Eigen::VectorXd spread_rates(const geo::CountyTable& table, double mu_spread);

/// Vectorized metapopulation SEIR right-hand side. County totals are taken from
/// the state's row sums.
Eigen::MatrixXd mixing_derivative(const CompartmentMatrix& state, const FlowMatrix& flow, const Eigen::VectorXd& beta,
                                  double sigma, double gamma);

/// state + h * derivative. Negative entries are clamped to zero and the added mass is
/// taken from the county's largest compartment, so county totals are preserved.
/// `clamp_events` is incremented once per clamped entry.
CompartmentMatrix euler_step(const CompartmentMatrix& state, const Eigen::MatrixXd& derivative, double h,
                             std::size_t& clamp_events);
CompartmentMatrix euler_step(const CompartmentMatrix& state, const Eigen::MatrixXd& derivative, double h);

/// Poisson draws for E(0) and I(0); redraws a county whose E+I exceeds its population.
CompartmentMatrix sample_initial_state(const geo::CountyTable& table, const MixParams& params, std::uint64_t seed);

struct Trajectory {
    std::vector<CompartmentMatrix> days;  ///< state at each day boundary, day 0 first
    Eigen::MatrixXd cumulative;           ///< counties x days, I + R
    Eigen::MatrixXd incidence;            ///< counties x days, floored day-over-day difference
    std::size_t clamp_events = 0;
};

/// Integrates `days` day-boundary samples (day 0 is the initial state) with step h = 1/m.
Trajectory simulate_scenario(const geo::CountyTable& table, const FlowMatrix& flow, const MixParams& params,
                             std::size_t days, double h, std::uint64_t seed);

/// Integrates from a given initial state; exposed for convergence studies.
Trajectory integrate(const CompartmentMatrix& initial, const FlowMatrix& flow, const Eigen::VectorXd& beta, double sigma,
                     double gamma, std::size_t days, double h);

/// Floored day-over-day difference with column 0 copied from `cumulative`.
Eigen::MatrixXd incidence_from_cumulative(const Eigen::MatrixXd& cumulative);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct ParameterRanges {
    Range mu_flow{1e4, 1e7};
    Range mu_spread{1e3, 1e5};
    Range sigma{0.1, 0.5};
    Range gamma{0.05, 0.3};
    Range lambda_E{1e-6, 1e-4};
    Range lambda_I{0.1, 0.5};

    void validate() const;
};

struct Scenario {
    std::size_t index = 0;
    bool validation = false;
    MixParams params;
    std::uint64_t seed = 0;
    std::vector<CompartmentMatrix> trajectory;  ///< empty after reading a corpus file
    Eigen::MatrixXd cumulative;
    Eigen::MatrixXd incidence;
};

struct ScenarioCorpus {
    std::vector<std::string> county_ids;
    ParameterRanges ranges;
    std::uint64_t seed = 0;
    std::size_t days = 0;
    double h = 0.25;
    std::size_t n_train = 0;
    std::size_t n_valid = 0;
    std::vector<Scenario> scenarios;  ///< training scenarios first, then validation

    std::vector<const Scenario*> training() const;
    std::vector<const Scenario*> validation() const;
};

struct CorpusOptions {
    std::size_t jobs = 1;
    bool keep_trajectories = false;
    double sparsity_epsilon = 0.0;
};

/// Draws every MixParams field uniformly per scenario from a seed derived from (seed, index).
ScenarioCorpus generate_corpus(const geo::CountyTable& table, const ParameterRanges& ranges, std::size_t n_train,
                               std::size_t n_valid, std::size_t days, double h, std::uint64_t seed,
                               const CorpusOptions& options = {});

void write_corpus(const std::string& path, const ScenarioCorpus& corpus);
ScenarioCorpus read_corpus(const std::string& path);

}  // namespace epiforge::seir

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epiforge/error.hpp"

namespace epiforge::nn {

using Matrix = Eigen::MatrixXd;

/// Named parameter arrays with gradient and NAdam moment slots of the same shape.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Matrix value;
        Matrix grad;
        Matrix m;
        Matrix v;
    };

    /// Adds a zero-initialized entry; names must be unique.
    std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

    std::optional<std::size_t> find(const std::string& name) const;
    std::size_t index(const std::string& name) const;
    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    Entry& at(const std::string& name) { return entries_[index(name)]; }
    const Entry& at(const std::string& name) const { return entries_[index(name)]; }

    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t parameter_count() const;

    void zero_grad();
    void reset_optimizer();
    bool all_finite() const;
    void set_all(double value);

    /// Copies parameter values only (shapes must match).
    void copy_values_from(const ParameterStore& other);

    std::int64_t step = 0;

private:
    std::vector<Entry> entries_;
};

class Tape;

/// Handle to a tape node.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;
};

class StaleTapeError : public std::logic_error {
public:
    StaleTapeError() : std::logic_error("tape already consumed by a reverse pass") {}
};

/// Records primitive operations in creation order, which is a topological order,
/// and replays their adjoints in exact reverse.
class Tape {
public:
    explicit Tape(ParameterStore* store = nullptr) : store_(store), values_(store) {}
    /// Read-only view for inference; a reverse pass on such a tape throws.
    explicit Tape(const ParameterStore* store) : store_(nullptr), values_(store) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var param(std::size_t index);
    Var param(const std::string& name);
    Var constant(Matrix value);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }
    /// Nodes visited by the last reverse pass.
    std::size_t visited() const noexcept { return visited_; }

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

    using Backward = std::function<void(Tape&, std::size_t)>;
    Var push(Matrix value, Backward backward);
    /// Adds `g` into the adjoint of node `id`.
    void accumulate(std::size_t id, const Matrix& g);

    void reverse(Var loss, double seed);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
    };

    ParameterStore* store_;
    const ParameterStore* values_;
    std::vector<Node> nodes_;
    std::vector<std::optional<std::size_t>> param_nodes_;
    bool consumed_ = false;
    std::size_t visited_ = 0;
};

// Primitive operations. Shapes are checked and mismatches throw DimensionError.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Adds column vector `bias` to every column of `a`.
Var add_bias(Var a, Var bias);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Elementwise product with a constant matrix.
Var mul_const(Var a, const Matrix& c);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
/// min(a, limit) elementwise; the gradient is zero where the limit binds.
Var clamp_max(Var a, double limit);
Var abs(Var a);
Var square(Var a);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var col(Var a, Eigen::Index j);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var transpose(Var a);
/// Column-major reshape.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
/// out[:,0] = base + d[:,0], out[:,i] = out[:,i-1] + d[:,i]; `base` is a column vector.
Var cumulative_chain(Var base, Var deltas);
Var sum(Var a);
/// Sum of w .* a for a constant weight matrix.
Var weighted_sum(Var a, const Matrix& w);

/// Backpropagates from a scalar node and accumulates parameter gradients into the
/// tape's store. Throws StaleTapeError on a second call.
void reverse_gradients(Tape& tape, Var loss, double loss_seed = 1.0);

/// Store slots of one LSTM cell; gate order (i, f, g, o).
struct LstmCell {
    std::size_t input_weights = 0;      ///< 4H x input
    std::size_t recurrent_weights = 0;  ///< 4H x H
    std::size_t bias = 0;               ///< 4H x 1
    Eigen::Index input = 0;
    Eigen::Index hidden = 0;

    static LstmCell create(ParameterStore& store, const std::string& prefix, Eigen::Index input, Eigen::Index hidden);
    std::size_t parameter_count() const { return static_cast<std::size_t>(4 * hidden * (input + hidden + 1)); }
};

struct LstmState {
    Var h;
    Var c;
};

/// c = f*c_prev + i*g, h = o*tanh(c).
LstmState lstm_cell_forward(Tape& tape, const LstmCell& cell, Var x, Var h_prev, Var c_prev);

/// Plain Eigen evaluation of one LSTM step without recording.
std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_cell_eval(const ParameterStore& store, const LstmCell& cell,
                                                           const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                                                           const Eigen::VectorXd& c_prev);

enum class Activation { Linear, Relu };

struct DenseLayer {
    std::size_t weights = 0;  ///< out x in
    std::size_t bias = 0;     ///< out x 1
    Eigen::Index in = 0;
    Eigen::Index out = 0;

    static DenseLayer create(ParameterStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out);
    std::size_t parameter_count() const { return static_cast<std::size_t>((in + 1) * out); }
};

/// y = W x + b, then activation; x may hold one sample per column.
Var dense_forward(Tape& tape, const DenseLayer& layer, Var x, Activation activation);

/// l1 * sum|theta| + l2 * sum theta^2 over entries accepted by `filter`; the
/// (sub)gradient is added to the entries' grad slots, with sign(0) = 0.
double regularization_penalty(ParameterStore& store, double l1, double l2,
                              const std::function<bool(const std::string&)>& filter);

struct NadamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class TrainingDivergedError : public std::runtime_error {
public:
    TrainingDivergedError(std::size_t epoch, std::size_t batch, const std::string& what)
        : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                             ": " + what),
          epoch_(epoch),
          batch_(batch) {}
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

class NonFiniteGradientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One Nesterov-Adam step over every entry, then zeroes gradients.
void nadam_update(ParameterStore& store, const NadamConfig& config);

/// Uniform on +-sqrt(6 / (fan_in + fan_out)) with fan_in = cols, fan_out = rows.
Matrix glorot_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

/// Glorot for every entry whose name does not end in ".b"; biases are zeroed.
void glorot_init_store(ParameterStore& store, std::uint64_t seed);

struct Checkpoint {
    std::string tag;
    std::string metadata;
    ParameterStore store;
};

/// Layout: 8-byte magic "EPFCKPT1", u32 version, u32-length-prefixed tag and
/// metadata, u32 entry count, per entry (u32 name length, name, u32 rows, u32 cols,
/// u64 payload offset), then row-major little-endian f64 payloads.
void save_checkpoint(const std::string& path, const ParameterStore& store, const std::string& tag,
                     const std::string& metadata);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace epiforge::nn

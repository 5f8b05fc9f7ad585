#include "epiforge/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "epiforge/error.hpp"
#include "epiforge/random.hpp"

namespace epiforge::nn {

namespace {

std::string shape_of(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
    }
}

void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("operands recorded on different tapes");
}

}  // namespace

std::size_t ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (find(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("parameter '" + name + "' needs positive dimensions");
    entries_.push_back({name, Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), Matrix::Zero(rows, cols),
                        Matrix::Zero(rows, cols)});
    return entries_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    return std::nullopt;
}

std::size_t ParameterStore::index(const std::string& name) const {
    auto i = find(name);
    if (!i) throw std::out_of_range("no parameter named '" + name + "'");
    return *i;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
}

void ParameterStore::reset_optimizer() {
    for (auto& e : entries_) {
        e.m.setZero();
        e.v.setZero();
    }
    step = 0;
}

bool ParameterStore::all_finite() const {
    for (const auto& e : entries_) {
        if (!e.value.allFinite() || !e.grad.allFinite()) return false;
    }
    return true;
}

void ParameterStore::set_all(double value) {
    for (auto& e : entries_) e.value.setConstant(value);
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
    if (other.size() != size()) throw DimensionError("parameter stores differ in entry count");
    for (std::size_t i = 0; i < size(); ++i) {
        require_same_shape("copy_values_from", entries_[i].value, other.entries_[i].value);
        entries_[i].value = other.entries_[i].value;
    }
}

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) throw DimensionError("scalar(): node has shape " + shape_of(v));
    return v(0, 0);
}

Var Tape::push(Matrix value, Backward backward) {
    nodes_.push_back({std::move(value), Matrix(), std::move(backward)});
    return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

Var Tape::param(std::size_t index) {
    if (!values_) throw std::logic_error("tape has no parameter store");
    if (index >= values_->size()) throw std::out_of_range("parameter index out of range");
    if (param_nodes_.size() < values_->size()) param_nodes_.resize(values_->size());
    if (param_nodes_[index]) return {this, *param_nodes_[index]};
    ParameterStore* store = store_;
    Var v = push((*values_)[index].value, [store, index](Tape& t, std::size_t self) {
        if (!store) throw std::logic_error("reverse pass through a read-only tape");
        (*store)[index].grad += t.grad(self);
    });
    param_nodes_[index] = v.id;
    return v;
}

Var Tape::param(const std::string& name) {
    if (!values_) throw std::logic_error("tape has no parameter store");
    return param(values_->index(name));
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

void Tape::reverse(Var loss, double seed) {
    if (consumed_) throw StaleTapeError();
    if (loss.tape != this) throw std::invalid_argument("loss node belongs to another tape");
    if (nodes_[loss.id].value.size() != 1) throw DimensionError("reverse pass needs a scalar loss node");
    consumed_ = true;
    visited_ = 0;
    accumulate(loss.id, Matrix::Constant(1, 1, seed));
    for (std::size_t k = nodes_.size(); k-- > 0;) {
        ++visited_;
        Node& n = nodes_[k];
        if (n.backward && n.grad.size() != 0) n.backward(*this, k);
    }
}

void reverse_gradients(Tape& tape, Var loss, double loss_seed) { tape.reverse(loss, loss_seed); }

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    if (a.cols() != b.rows()) throw DimensionError("matmul: " + shape_of(a.value()) + " x " + shape_of(b.value()));
    return a.tape->push(a.value() * b.value(), [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        t.accumulate(a.id, g * t.value(b.id).transpose());
        t.accumulate(b.id, t.value(a.id).transpose() * g);
    });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("add", a.value(), b.value());
    return a.tape->push(a.value() + b.value(), [a, b](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.grad(self));
        t.accumulate(b.id, t.grad(self));
    });
}

Var sub(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("sub", a.value(), b.value());
    return a.tape->push(a.value() - b.value(), [a, b](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.grad(self));
        t.accumulate(b.id, -t.grad(self));
    });
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("mul", a.value(), b.value());
    return a.tape->push(a.value().cwiseProduct(b.value()), [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        t.accumulate(a.id, g.cwiseProduct(t.value(b.id)));
        t.accumulate(b.id, g.cwiseProduct(t.value(a.id)));
    });
}

Var add_bias(Var a, Var bias) {
    require_same_tape(a, bias);
    if (bias.cols() != 1 || bias.rows() != a.rows()) {
        throw DimensionError("add_bias: bias " + shape_of(bias.value()) + " for " + shape_of(a.value()));
    }
    Matrix out = a.value();
    out.colwise() += bias.value().col(0);
    return a.tape->push(std::move(out), [a, bias](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        t.accumulate(a.id, g);
        t.accumulate(bias.id, g.rowwise().sum());
    });
}

Var scale(Var a, double s) {
    return a.tape->push(a.value() * s, [a, s](Tape& t, std::size_t self) { t.accumulate(a.id, t.grad(self) * s); });
}

Var add_scalar(Var a, double s) {
    return a.tape->push(a.value().array() + s, [a](Tape& t, std::size_t self) { t.accumulate(a.id, t.grad(self)); });
}

Var mul_const(Var a, const Matrix& c) {
    require_same_shape("mul_const", a.value(), c);
    return a.tape->push(a.value().cwiseProduct(c), [a, c](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.grad(self).cwiseProduct(c));
    });
}

Var sigmoid(Var a) {
    Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return a.tape->push(std::move(y), [a](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.accumulate(a.id, (t.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
    });
}

Var tanh(Var a) {
    Matrix y = a.value().array().tanh().matrix();
    return a.tape->push(std::move(y), [a](Tape& t, std::size_t self) {
        const Matrix& y = t.value(self);
        t.accumulate(a.id, (t.grad(self).array() * (1.0 - y.array().square())).matrix());
    });
}

Var relu(Var a) {
    Matrix y = a.value().cwiseMax(0.0);
    return a.tape->push(std::move(y), [a](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a.id);
        t.accumulate(a.id, (t.grad(self).array() * (x.array() > 0.0).cast<double>()).matrix());
    });
}

Var exp(Var a) {
    Matrix y = a.value().array().exp().matrix();
    return a.tape->push(std::move(y), [a](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.grad(self).cwiseProduct(t.value(self)));
    });
}

Var clamp_max(Var a, double limit) {
    return a.tape->push(a.value().cwiseMin(limit), [a, limit](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a.id);
        t.accumulate(a.id, (t.grad(self).array() * (x.array() < limit).cast<double>()).matrix());
    });
}

Var abs(Var a) {
    return a.tape->push(a.value().cwiseAbs(), [a](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a.id);
        t.accumulate(a.id, (t.grad(self).array() * x.array().sign()).matrix());
    });
}

Var square(Var a) {
    return a.tape->push(a.value().array().square().matrix(), [a](Tape& t, std::size_t self) {
        t.accumulate(a.id, (2.0 * t.grad(self).array() * t.value(a.id).array()).matrix());
    });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw DimensionError("slice_rows out of range");
    return a.tape->push(a.value().middleRows(start, count), [a, start, count](Tape& t, std::size_t self) {
        Matrix g = Matrix::Zero(t.value(a.id).rows(), t.value(a.id).cols());
        g.middleRows(start, count) = t.grad(self);
        t.accumulate(a.id, g);
    });
}

Var col(Var a, Eigen::Index j) {
    if (j < 0 || j >= a.cols()) throw DimensionError("col index out of range");
    return a.tape->push(a.value().col(j), [a, j](Tape& t, std::size_t self) {
        Matrix g = Matrix::Zero(t.value(a.id).rows(), t.value(a.id).cols());
        g.col(j) = t.grad(self);
        t.accumulate(a.id, g);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    for (const auto& p : parts) {
        require_same_tape(parts[0], p);
        if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return parts[0].tape->push(std::move(out), [parts](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Eigen::Index r = 0;
        for (const auto& p : parts) {
            const Eigen::Index n = t.value(p.id).rows();
            t.accumulate(p.id, g.middleRows(r, n));
            r += n;
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts[0].rows();
    for (const auto& p : parts) {
        require_same_tape(parts[0], p);
        if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    return parts[0].tape->push(std::move(out), [parts](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Eigen::Index c = 0;
        for (const auto& p : parts) {
            const Eigen::Index n = t.value(p.id).cols();
            t.accumulate(p.id, g.middleCols(c, n));
            c += n;
        }
    });
}

Var transpose(Var a) {
    return a.tape->push(a.value().transpose(), [a](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.grad(self).transpose());
    });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != a.value().size()) throw DimensionError("reshape: cannot view " + shape_of(a.value()) + " as (" + std::to_string(rows) + "x" + std::to_string(cols) + ")");
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    return a.tape->push(std::move(out), [a](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a.id);
        t.accumulate(a.id, Eigen::Map<const Matrix>(t.grad(self).data(), x.rows(), x.cols()));
    });
}

Var cumulative_chain(Var base, Var deltas) {
    require_same_tape(base, deltas);
    if (base.cols() != 1 || base.rows() != deltas.rows()) {
        throw DimensionError("cumulative_chain: base " + shape_of(base.value()) + " for deltas " + shape_of(deltas.value()));
    }
    const Matrix& d = deltas.value();
    Matrix out(d.rows(), d.cols());
    for (Eigen::Index i = 0; i < d.cols(); ++i) {
        if (i == 0) {
            out.col(0) = base.value().col(0) + d.col(0);
        } else {
            out.col(i) = out.col(i - 1) + d.col(i);
        }
    }
    return base.tape->push(std::move(out), [base, deltas](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix gd(g.rows(), g.cols());
        for (Eigen::Index i = g.cols(); i-- > 0;) {
            if (i + 1 == g.cols()) {
                gd.col(i) = g.col(i);
            } else {
                gd.col(i) = gd.col(i + 1) + g.col(i);
            }
        }
        t.accumulate(base.id, gd.col(0));
        t.accumulate(deltas.id, gd);
    });
}

Var sum(Var a) {
    return a.tape->push(Matrix::Constant(1, 1, a.value().sum()), [a](Tape& t, std::size_t self) {
        const Matrix& x = t.value(a.id);
        t.accumulate(a.id, Matrix::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
    });
}

Var weighted_sum(Var a, const Matrix& w) {
    require_same_shape("weighted_sum", a.value(), w);
    return a.tape->push(Matrix::Constant(1, 1, a.value().cwiseProduct(w).sum()), [a, w](Tape& t, std::size_t self) {
        t.accumulate(a.id, w * t.grad(self)(0, 0));
    });
}

LstmCell LstmCell::create(ParameterStore& store, const std::string& prefix, Eigen::Index input, Eigen::Index hidden) {
    if (input <= 0 || hidden <= 0) throw std::invalid_argument("LSTM cell needs positive input and hidden sizes");
    LstmCell cell;
    cell.input = input;
    cell.hidden = hidden;
    cell.input_weights = store.add(prefix + ".W_x", 4 * hidden, input);
    cell.recurrent_weights = store.add(prefix + ".W_h", 4 * hidden, hidden);
    cell.bias = store.add(prefix + ".b", 4 * hidden, 1);
    return cell;
}

LstmState lstm_cell_forward(Tape& tape, const LstmCell& cell, Var x, Var h_prev, Var c_prev) {
    const Eigen::Index H = cell.hidden;
    if (x.rows() != cell.input || x.cols() != 1) throw DimensionError("lstm: input has shape " + shape_of(x.value()));
    if (h_prev.rows() != H || c_prev.rows() != H || h_prev.cols() != 1 || c_prev.cols() != 1) {
        throw DimensionError("lstm: state size does not match hidden width");
    }
    Var z = add_bias(add(matmul(tape.param(cell.input_weights), x), matmul(tape.param(cell.recurrent_weights), h_prev)),
                     tape.param(cell.bias));
    Var i = sigmoid(slice_rows(z, 0, H));
    Var f = sigmoid(slice_rows(z, H, H));
    Var g = tanh(slice_rows(z, 2 * H, H));
    Var o = sigmoid(slice_rows(z, 3 * H, H));
    Var c = add(mul(f, c_prev), mul(i, g));
    Var h = mul(o, tanh(c));
    return {h, c};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_cell_eval(const ParameterStore& store, const LstmCell& cell,
                                                           const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                                                           const Eigen::VectorXd& c_prev) {
    const Eigen::Index H = cell.hidden;
    const Eigen::VectorXd z = store[cell.input_weights].value * x + store[cell.recurrent_weights].value * h_prev +
                              store[cell.bias].value.col(0);
    auto sig = [](const Eigen::VectorXd& v) -> Eigen::VectorXd { return (1.0 / (1.0 + (-v.array()).exp())).matrix(); };
    const Eigen::VectorXd i = sig(z.segment(0, H));
    const Eigen::VectorXd f = sig(z.segment(H, H));
    const Eigen::VectorXd g = z.segment(2 * H, H).array().tanh().matrix();
    const Eigen::VectorXd o = sig(z.segment(3 * H, H));
    Eigen::VectorXd c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    Eigen::VectorXd h = o.cwiseProduct(c.array().tanh().matrix());
    return {std::move(h), std::move(c)};
}

DenseLayer DenseLayer::create(ParameterStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("dense layer needs positive sizes");
    DenseLayer layer;
    layer.in = in;
    layer.out = out;
    layer.weights = store.add(prefix + ".W", out, in);
    layer.bias = store.add(prefix + ".b", out, 1);
    return layer;
}

Var dense_forward(Tape& tape, const DenseLayer& layer, Var x, Activation activation) {
    if (x.rows() != layer.in) throw DimensionError("dense: input has shape " + shape_of(x.value()));
    Var y = add_bias(matmul(tape.param(layer.weights), x), tape.param(layer.bias));
    return activation == Activation::Relu ? relu(y) : y;
}

double regularization_penalty(ParameterStore& store, double l1, double l2,
                              const std::function<bool(const std::string&)>& filter) {
    if (l1 < 0.0 || l2 < 0.0) throw std::invalid_argument("regularization weights must be >= 0");
    double penalty = 0.0;
    if (l1 == 0.0 && l2 == 0.0) return penalty;
    for (std::size_t k = 0; k < store.size(); ++k) {
        auto& e = store[k];
        if (!filter(e.name)) continue;
        penalty += l1 * e.value.cwiseAbs().sum() + l2 * e.value.squaredNorm();
        e.grad.array() += l1 * e.value.array().sign() + 2.0 * l2 * e.value.array();
    }
    return penalty;
}

void nadam_update(ParameterStore& store, const NadamConfig& cfg) {
    for (std::size_t k = 0; k < store.size(); ++k) {
        if (!store[k].grad.allFinite()) {
            throw NonFiniteGradientError("non-finite gradient in '" + store[k].name + "'; update refused");
        }
    }
    const double t = static_cast<double>(store.step + 1);
    const double bc1_next = 1.0 - std::pow(cfg.beta1, t + 1.0);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < store.size(); ++k) {
        auto& e = store[k];
        e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * e.grad;
        e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * e.grad.cwiseAbs2();
        const Eigen::ArrayXXd m_hat = (cfg.beta1 * e.m + (1.0 - cfg.beta1) * e.grad).array() / bc1_next;
        const Eigen::ArrayXXd v_hat = e.v.array() / bc2;
        e.value.array() -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        e.grad.setZero();
    }
    store.step += 1;
}

Matrix glorot_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("glorot_init needs positive dimensions");
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Rng rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
    }
    return m;
}

void glorot_init_store(ParameterStore& store, std::uint64_t seed) {
    for (std::size_t k = 0; k < store.size(); ++k) {
        auto& e = store[k];
        const bool is_bias = e.name.size() >= 2 && e.name.compare(e.name.size() - 2, 2, ".b") == 0;
        if (is_bias) {
            e.value.setZero();
        } else {
            e.value = glorot_init(e.value.rows(), e.value.cols(), derive_seed(seed, e.name));
        }
    }
    store.reset_optimizer();
    store.zero_grad();
}

namespace {

constexpr char kCheckpointMagic[8] = {'E', 'P', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

    std::uint64_t uint(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw std::runtime_error("checkpoint '" + path_ + "' is truncated");
    }
    const std::string& data_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store, const std::string& tag,
                     const std::string& metadata) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    put_string(out, tag);
    put_string(out, metadata);
    put_u32(out, static_cast<std::uint32_t>(store.size()));
    std::uint64_t offset = 0;
    for (const auto& e : store.entries()) {
        put_string(out, e.name);
        put_u32(out, static_cast<std::uint32_t>(e.value.rows()));
        put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
        put_u64(out, offset);
        offset += static_cast<std::uint64_t>(e.value.size()) * 8;
    }
    for (const auto& e : store.entries()) {
        for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < e.value.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(e.value(r, c)));
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << f.rdbuf();
    const std::string data = buf.str();
    Reader in(data, path);
    if (in.bytes(8) != std::string(kCheckpointMagic, 8)) throw std::runtime_error("'" + path + "' is not an epiforge checkpoint");
    const auto version = in.uint(4);
    if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.tag = in.bytes(in.uint(4));
    ck.metadata = in.bytes(in.uint(4));
    const auto count = in.uint(4);
    struct Dir {
        std::string name;
        Eigen::Index rows, cols;
        std::uint64_t offset;
    };
    std::vector<Dir> dir;
    for (std::uint64_t k = 0; k < count; ++k) {
        Dir d;
        d.name = in.bytes(in.uint(4));
        d.rows = static_cast<Eigen::Index>(in.uint(4));
        d.cols = static_cast<Eigen::Index>(in.uint(4));
        d.offset = in.uint(8);
        dir.push_back(std::move(d));
    }
    const std::size_t payload = in.pos();
    for (const auto& d : dir) {
        const std::size_t idx = ck.store.add(d.name, d.rows, d.cols);
        const std::size_t start = payload + d.offset;
        if (start + static_cast<std::size_t>(d.rows * d.cols) * 8 > data.size()) {
            throw std::runtime_error("checkpoint '" + path + "' payload for '" + d.name + "' is truncated");
        }
        auto& m = ck.store[idx].value;
        std::size_t p = start;
        for (Eigen::Index r = 0; r < d.rows; ++r) {
            for (Eigen::Index c = 0; c < d.cols; ++c) {
                std::uint64_t bits = 0;
                for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[p + static_cast<std::size_t>(i)])) << (8 * i);
                m(r, c) = std::bit_cast<double>(bits);
                p += 8;
            }
        }
    }
    return ck;
}

}  // namespace epiforge::nn

#include "epiforge/seir.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "epiforge/parallel.hpp"
#include "epiforge/random.hpp"
#include "epiforge/text.hpp"

namespace epiforge::seir {

void validate(const MixParams& p) {
    if (!(p.mu_flow > 0.0)) throw std::invalid_argument("mu_flow must be > 0");
    if (!(p.mu_spread > 0.0)) throw std::invalid_argument("mu_spread must be > 0");
    if (!(p.sigma >= 0.0) || !(p.gamma >= 0.0)) throw std::invalid_argument("sigma and gamma must be >= 0");
    if (!(p.lambda_E >= 0.0 && p.lambda_E <= 1.0) || !(p.lambda_I >= 0.0 && p.lambda_I <= 1.0)) {
        throw std::invalid_argument("lambda_E and lambda_I must lie in [0, 1]");
    }
}

State4 seir_derivative(const State4& state, const SeirParams& params, double N) {
    if (!(N > 0.0)) throw std::domain_error("seir_derivative: population N must be > 0");
    const double infection = params.beta * state[I] * (state[S] / N);
    const double incubation = params.sigma * state[E];
    const double recovery = params.gamma * state[I];
    return {-infection, infection - incubation, incubation - recovery, recovery};
}

FlowMatrix FlowMatrix::zero(std::size_t counties) {
    const auto n = static_cast<Eigen::Index>(counties);
    return {Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
}

Eigen::MatrixXd balance_flow(const Eigen::MatrixXd& raw) {
    if (raw.rows() != raw.cols()) throw DimensionError("flow matrix must be square");
    const double asym = raw.size() == 0 ? 0.0 : (raw - raw.transpose()).cwiseAbs().maxCoeff();
    const double scale = raw.size() == 0 ? 0.0 : raw.cwiseAbs().maxCoeff();
    if (asym > 1e-12 * std::max(scale, 1e-300)) {
        std::ostringstream msg;
        msg << "flow matrix is not symmetric (max deviation " << asym << ")";
        throw std::invalid_argument(msg.str());
    }
    Eigen::MatrixXd balanced = raw;
    const Eigen::RowVectorXd column_sums = raw.colwise().sum();
    balanced.diagonal() -= column_sums.transpose();
    return balanced;
}

FlowMatrix build_flow_matrix(const geo::CountyTable& table, const Eigen::MatrixXd& distances, double mu_flow,
                             double sparsity_epsilon) {
    const auto n = static_cast<Eigen::Index>(table.size());
    if (distances.rows() != n || distances.cols() != n) throw DimensionError("distance matrix does not match county count");
    if (!(mu_flow > 0.0)) throw std::invalid_argument("mu_flow must be > 0");
    FlowMatrix flow;
    flow.raw = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = distances(i, j);
            if (!(d > 0.0)) {
                throw std::invalid_argument("degenerate distance between counties " + table[static_cast<std::size_t>(i)].id +
                                            " and " + table[static_cast<std::size_t>(j)].id);
            }
            const double pmin = static_cast<double>(std::min(table[static_cast<std::size_t>(i)].population,
                                                             table[static_cast<std::size_t>(j)].population));
            double f = pmin / (d * mu_flow);
            if (f < sparsity_epsilon) f = 0.0;
            flow.raw(i, j) = flow.raw(j, i) = f;
        }
    }
    flow.balanced = balance_flow(flow.raw);
    return flow;
}

Eigen::VectorXd spread_rates(const geo::CountyTable& table, double mu_spread) {
    if (!(mu_spread > 0.0)) throw std::invalid_argument("mu_spread must be > 0");
    return table.densities() / mu_spread;
}

Eigen::MatrixXd mixing_derivative(const CompartmentMatrix& state, const FlowMatrix& flow, const Eigen::VectorXd& beta,
                                  double sigma, double gamma) {
    const Eigen::Index n = state.values.rows();
    if (state.values.cols() != 4) throw DimensionError("compartment matrix must have 4 columns");
    if (flow.balanced.rows() != n || flow.balanced.cols() != n) throw DimensionError("flow matrix does not match county count");
    if (beta.size() != n) throw DimensionError("beta vector does not match county count");

    Eigen::MatrixXd fractions(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double total = state.values.row(i).sum();
        if (total > 0.0) {
            fractions.row(i) = state.values.row(i) / total;
        } else {
            fractions.row(i).setZero();
        }
    }

    Eigen::MatrixXd d = flow.balanced * fractions;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double infection = beta[i] * state.values(i, I) * fractions(i, S);
        const double incubation = sigma * state.values(i, E);
        const double recovery = gamma * state.values(i, I);
        d(i, S) = d(i, S) - infection;
        d(i, E) = d(i, E) + infection - incubation;
        d(i, I) = d(i, I) + incubation - recovery;
        d(i, R) = d(i, R) + recovery;
    }
    return d;
}

CompartmentMatrix euler_step(const CompartmentMatrix& state, const Eigen::MatrixXd& derivative, double h,
                             std::size_t& clamp_events) {
    if (!(h > 0.0)) throw std::domain_error("euler_step: step h must be > 0");
    if (derivative.rows() != state.values.rows() || derivative.cols() != state.values.cols()) {
        throw DimensionError("euler_step: derivative shape does not match state");
    }
    CompartmentMatrix next{state.values + h * derivative};
    for (Eigen::Index i = 0; i < next.values.rows(); ++i) {
        double deficit = 0.0;
        for (Eigen::Index k = 0; k < next.values.cols(); ++k) {
            if (next.values(i, k) < 0.0) {
                deficit -= next.values(i, k);
                next.values(i, k) = 0.0;
                ++clamp_events;
            }
        }
        while (deficit > 0.0) {
            Eigen::Index largest = 0;
            const double available = next.values.row(i).maxCoeff(&largest);
            if (available <= 0.0) break;
            const double taken = std::min(available, deficit);
            next.values(i, largest) -= taken;
            deficit -= taken;
        }
    }
    return next;
}

CompartmentMatrix euler_step(const CompartmentMatrix& state, const Eigen::MatrixXd& derivative, double h) {
    std::size_t ignored = 0;
    return euler_step(state, derivative, h, ignored);
}

CompartmentMatrix sample_initial_state(const geo::CountyTable& table, const MixParams& params, std::uint64_t seed) {
    validate(params);
    Rng rng(seed);
    const auto n = static_cast<Eigen::Index>(table.size());
    CompartmentMatrix state{Eigen::MatrixXd::Zero(n, 4)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const double p = static_cast<double>(table[static_cast<std::size_t>(i)].population);
        const double mean_e = p * params.lambda_E;
        const double mean_i = p * params.lambda_E * params.lambda_I;
        constexpr int kMaxAttempts = 1000;
        int attempt = 0;
        for (; attempt < kMaxAttempts; ++attempt) {
            const auto e = static_cast<double>(rng.poisson(mean_e));
            const auto inf = static_cast<double>(rng.poisson(mean_i));
            if (e + inf <= p) {
                state.values(i, E) = e;
                state.values(i, I) = inf;
                state.values(i, S) = p - e - inf;
                break;
            }
        }
        if (attempt == kMaxAttempts) {
            throw std::runtime_error("sample_initial_state: initial infections exceed population of county " +
                                     table[static_cast<std::size_t>(i)].id + " after 1000 draws");
        }
    }
    return state;
}

Eigen::MatrixXd incidence_from_cumulative(const Eigen::MatrixXd& cumulative) {
    Eigen::MatrixXd inc(cumulative.rows(), cumulative.cols());
    if (cumulative.cols() == 0) return inc;
    inc.col(0) = cumulative.col(0);
    for (Eigen::Index d = 1; d < cumulative.cols(); ++d) {
        inc.col(d) = (cumulative.col(d) - cumulative.col(d - 1)).cwiseMax(0.0);
    }
    return inc;
}

namespace {

std::size_t steps_per_day(double h) {
    if (!(h > 0.0) || h > 1.0) throw std::domain_error("integration step h must lie in (0, 1]");
    const double m = std::round(1.0 / h);
    if (std::fabs(m * h - 1.0) > 1e-9) throw std::domain_error("integration step h must divide one day (h = 1/m)");
    return static_cast<std::size_t>(m);
}

}  // namespace

Trajectory integrate(const CompartmentMatrix& initial, const FlowMatrix& flow, const Eigen::VectorXd& beta, double sigma,
                     double gamma, std::size_t days, double h) {
    if (days < 1) throw std::invalid_argument("simulation needs at least one day");
    const std::size_t m = steps_per_day(h);
    Trajectory traj;
    traj.days.reserve(days);
    traj.days.push_back(initial);
    CompartmentMatrix state = initial;
    for (std::size_t day = 1; day < days; ++day) {
        for (std::size_t step = 0; step < m; ++step) {
            state = euler_step(state, mixing_derivative(state, flow, beta, sigma, gamma), h, traj.clamp_events);
        }
        traj.days.push_back(state);
    }
    const auto n = static_cast<Eigen::Index>(initial.counties());
    traj.cumulative.resize(n, static_cast<Eigen::Index>(days));
    for (std::size_t day = 0; day < days; ++day) traj.cumulative.col(static_cast<Eigen::Index>(day)) = traj.days[day].recorded();
    traj.incidence = incidence_from_cumulative(traj.cumulative);
    return traj;
}

Trajectory simulate_scenario(const geo::CountyTable& table, const FlowMatrix& flow, const MixParams& params,
                             std::size_t days, double h, std::uint64_t seed) {
    validate(params);
    if (flow.counties() != table.size()) throw DimensionError("flow matrix does not match county table");
    const CompartmentMatrix initial = sample_initial_state(table, params, seed);
    return integrate(initial, flow, spread_rates(table, params.mu_spread), params.sigma, params.gamma, days, h);
}

void ParameterRanges::validate() const {
    const std::pair<const char*, Range> all[] = {{"mu_flow", mu_flow}, {"mu_spread", mu_spread}, {"sigma", sigma},
                                                 {"gamma", gamma},     {"lambda_E", lambda_E},   {"lambda_I", lambda_I}};
    for (const auto& [name, r] : all) {
        if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
            throw std::invalid_argument(std::string("invalid range for ") + name);
        }
    }
    if (!(mu_flow.lo > 0.0) || !(mu_spread.lo > 0.0)) throw std::invalid_argument("resistance ranges must be positive");
    if (!(sigma.lo >= 0.0) || !(gamma.lo >= 0.0)) throw std::invalid_argument("rate ranges must be non-negative");
    if (!(lambda_E.lo >= 0.0) || !(lambda_E.hi <= 1.0) || !(lambda_I.lo >= 0.0) || !(lambda_I.hi <= 1.0)) {
        throw std::invalid_argument("prevalence ranges must lie in [0, 1]");
    }
}

std::vector<const Scenario*> ScenarioCorpus::training() const {
    std::vector<const Scenario*> out;
    for (const auto& s : scenarios) {
        if (!s.validation) out.push_back(&s);
    }
    return out;
}

std::vector<const Scenario*> ScenarioCorpus::validation() const {
    std::vector<const Scenario*> out;
    for (const auto& s : scenarios) {
        if (s.validation) out.push_back(&s);
    }
    return out;
}

ScenarioCorpus generate_corpus(const geo::CountyTable& table, const ParameterRanges& ranges, std::size_t n_train,
                               std::size_t n_valid, std::size_t days, double h, std::uint64_t seed,
                               const CorpusOptions& options) {
    ranges.validate();
    steps_per_day(h);
    ScenarioCorpus corpus;
    corpus.county_ids = table.ids();
    corpus.ranges = ranges;
    corpus.seed = seed;
    corpus.days = days;
    corpus.h = h;
    corpus.n_train = n_train;
    corpus.n_valid = n_valid;
    corpus.scenarios.resize(n_train + n_valid);

    const Eigen::MatrixXd distances = geo::distance_matrix(table);
    auto run_one = [&](std::size_t index) {
        Scenario& sc = corpus.scenarios[index];
        sc.index = index;
        sc.validation = index >= n_train;
        sc.seed = derive_seed(seed, static_cast<std::uint64_t>(index));
        Rng rng(derive_seed(sc.seed, "params"));
        sc.params.mu_flow = rng.uniform(ranges.mu_flow.lo, ranges.mu_flow.hi);
        sc.params.mu_spread = rng.uniform(ranges.mu_spread.lo, ranges.mu_spread.hi);
        sc.params.sigma = rng.uniform(ranges.sigma.lo, ranges.sigma.hi);
        sc.params.gamma = rng.uniform(ranges.gamma.lo, ranges.gamma.hi);
        sc.params.lambda_E = rng.uniform(ranges.lambda_E.lo, ranges.lambda_E.hi);
        sc.params.lambda_I = rng.uniform(ranges.lambda_I.lo, ranges.lambda_I.hi);
        const FlowMatrix flow = build_flow_matrix(table, distances, sc.params.mu_flow, options.sparsity_epsilon);
        Trajectory traj = simulate_scenario(table, flow, sc.params, days, h, derive_seed(sc.seed, "init"));
        sc.cumulative = std::move(traj.cumulative);
        sc.incidence = std::move(traj.incidence);
        if (options.keep_trajectories) sc.trajectory = std::move(traj.days);
    };

    parallel_for(corpus.scenarios.size(), options.jobs, run_one);
    return corpus;
}

namespace {

constexpr const char* kCorpusMagic = "epiforge-corpus";
constexpr int kCorpusVersion = 1;

void write_range(std::ostream& out, const char* name, const Range& r) {
    out << "range " << name << ' ' << text::format_double(r.lo) << ' ' << text::format_double(r.hi) << '\n';
}

double need_double(const std::string& path, std::size_t line, const std::string& token) {
    auto v = text::parse_double(token);
    if (!v) throw ParseError(path, line, "bad number '" + token + "'");
    return *v;
}

std::uint64_t need_u64(const std::string& path, std::size_t line, const std::string& token) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
        return v;
    } catch (const std::exception&) {
        throw ParseError(path, line, "bad integer '" + token + "'");
    }
}

}  // namespace

void write_corpus(const std::string& path, const ScenarioCorpus& corpus) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << kCorpusMagic << ' ' << kCorpusVersion << '\n';
    out << "seed " << corpus.seed << '\n';
    out << "days " << corpus.days << '\n';
    out << "h " << text::format_double(corpus.h) << '\n';
    out << "n_train " << corpus.n_train << '\n';
    out << "n_valid " << corpus.n_valid << '\n';
    write_range(out, "mu_flow", corpus.ranges.mu_flow);
    write_range(out, "mu_spread", corpus.ranges.mu_spread);
    write_range(out, "sigma", corpus.ranges.sigma);
    write_range(out, "gamma", corpus.ranges.gamma);
    write_range(out, "lambda_E", corpus.ranges.lambda_E);
    write_range(out, "lambda_I", corpus.ranges.lambda_I);
    out << "counties " << corpus.county_ids.size();
    for (const auto& id : corpus.county_ids) out << ' ' << id;
    out << '\n';
    for (const auto& sc : corpus.scenarios) {
        const auto& p = sc.params;
        out << "scenario " << sc.index << ' ' << (sc.validation ? "valid" : "train") << ' ' << sc.seed << ' '
            << text::format_double(p.mu_flow) << ' ' << text::format_double(p.mu_spread) << ' '
            << text::format_double(p.sigma) << ' ' << text::format_double(p.gamma) << ' '
            << text::format_double(p.lambda_E) << ' ' << text::format_double(p.lambda_I) << '\n';
        for (Eigen::Index i = 0; i < sc.cumulative.rows(); ++i) {
            for (Eigen::Index d = 0; d < sc.cumulative.cols(); ++d) {
                if (d) out << ' ';
                out << text::format_double(sc.cumulative(i, d));
            }
            out << '\n';
        }
    }
    out << "end\n";
}

ScenarioCorpus read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    ScenarioCorpus corpus;
    std::string line;
    std::size_t line_no = 0;
    auto next_tokens = [&]() -> std::vector<std::string> {
        if (!std::getline(in, line)) throw ParseError(path, line_no + 1, "unexpected end of file");
        ++line_no;
        std::istringstream ss(line);
        std::vector<std::string> tokens;
        for (std::string t; ss >> t;) tokens.push_back(t);
        return tokens;
    };
    auto expect = [&](const std::vector<std::string>& t, const char* key, std::size_t count) {
        if (t.empty() || t[0] != key || t.size() != count) throw ParseError(path, line_no, std::string("expected '") + key + "' record");
    };

    auto t = next_tokens();
    if (t.size() != 2 || t[0] != kCorpusMagic || t[1] != std::to_string(kCorpusVersion)) {
        throw ParseError(path, line_no, "not an epiforge corpus v1 file");
    }
    t = next_tokens(); expect(t, "seed", 2); corpus.seed = need_u64(path, line_no, t[1]);
    t = next_tokens(); expect(t, "days", 2); corpus.days = need_u64(path, line_no, t[1]);
    t = next_tokens(); expect(t, "h", 2); corpus.h = need_double(path, line_no, t[1]);
    t = next_tokens(); expect(t, "n_train", 2); corpus.n_train = need_u64(path, line_no, t[1]);
    t = next_tokens(); expect(t, "n_valid", 2); corpus.n_valid = need_u64(path, line_no, t[1]);
    Range* slots[] = {&corpus.ranges.mu_flow, &corpus.ranges.mu_spread, &corpus.ranges.sigma,
                      &corpus.ranges.gamma,   &corpus.ranges.lambda_E,  &corpus.ranges.lambda_I};
    const char* names[] = {"mu_flow", "mu_spread", "sigma", "gamma", "lambda_E", "lambda_I"};
    for (std::size_t k = 0; k < 6; ++k) {
        t = next_tokens();
        expect(t, "range", 4);
        if (t[1] != names[k]) throw ParseError(path, line_no, std::string("expected range ") + names[k]);
        slots[k]->lo = need_double(path, line_no, t[2]);
        slots[k]->hi = need_double(path, line_no, t[3]);
    }
    t = next_tokens();
    if (t.size() < 2 || t[0] != "counties") throw ParseError(path, line_no, "expected 'counties' record");
    const std::size_t n = need_u64(path, line_no, t[1]);
    if (t.size() != n + 2) throw ParseError(path, line_no, "county count does not match listed ids");
    corpus.county_ids.assign(t.begin() + 2, t.end());

    const std::size_t total = corpus.n_train + corpus.n_valid;
    corpus.scenarios.resize(total);
    for (std::size_t s = 0; s < total; ++s) {
        t = next_tokens();
        expect(t, "scenario", 10);
        Scenario& sc = corpus.scenarios[s];
        sc.index = need_u64(path, line_no, t[1]);
        if (t[2] != "train" && t[2] != "valid") throw ParseError(path, line_no, "split must be train or valid");
        sc.validation = t[2] == "valid";
        sc.seed = need_u64(path, line_no, t[3]);
        sc.params.mu_flow = need_double(path, line_no, t[4]);
        sc.params.mu_spread = need_double(path, line_no, t[5]);
        sc.params.sigma = need_double(path, line_no, t[6]);
        sc.params.gamma = need_double(path, line_no, t[7]);
        sc.params.lambda_E = need_double(path, line_no, t[8]);
        sc.params.lambda_I = need_double(path, line_no, t[9]);
        sc.cumulative.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(corpus.days));
        for (std::size_t i = 0; i < n; ++i) {
            t = next_tokens();
            if (t.size() != corpus.days) throw ParseError(path, line_no, "expected " + std::to_string(corpus.days) + " values");
            for (std::size_t d = 0; d < corpus.days; ++d) {
                sc.cumulative(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = need_double(path, line_no, t[d]);
            }
        }
        sc.incidence = incidence_from_cumulative(sc.cumulative);
    }
    t = next_tokens();
    expect(t, "end", 1);
    return corpus;
}

}  // namespace epiforge::seir

#include "doctest.h"

#include <cmath>

#include "epiforge/random.hpp"
#include "epiforge/seir.hpp"
#include "../support/temp_dir.hpp"

using namespace epiforge;
using namespace epiforge::seir;
using epiforge::testing::TempDir;

namespace {

geo::CountyRecord county(std::string id, double lat, double lon, std::int64_t pop, double density) {
    return {std::move(id), "c", "S", lat, lon, pop, density};
}

Eigen::MatrixXd random_symmetric(Eigen::Index n, Rng& rng, double scale) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = m(j, i) = rng.uniform() * scale;
    }
    return m;
}

}  // namespace

TEST_CASE("seir derivative") {
    CHECK(seir_derivative({1000, 0, 0, 0}, {0.5, 0.2, 0.1}, 1000) == State4{0, 0, 0, 0});
    auto d = seir_derivative({900, 0, 100, 0}, {0.5, 0.2, 0.1}, 1000);
    CHECK(d[0] == doctest::Approx(-45.0));
    CHECK(d[1] == doctest::Approx(45.0));
    CHECK(d[2] == doctest::Approx(-10.0));
    CHECK(d[3] == doctest::Approx(10.0));
    Rng rng(1);
    for (int k = 0; k < 100; ++k) {
        State4 s{rng.uniform(0, 1e5), rng.uniform(0, 1e5), rng.uniform(0, 1e5), rng.uniform(0, 1e5)};
        const double N = s[0] + s[1] + s[2] + s[3];
        auto ds = seir_derivative(s, {rng.uniform(), rng.uniform(), rng.uniform()}, N);
        CHECK(std::abs(ds[0] + ds[1] + ds[2] + ds[3]) <= 1e-12 * N);
    }
    CHECK_THROWS_AS(seir_derivative({0, 0, 0, 0}, {0.5, 0.2, 0.1}, 0.0), std::domain_error);
}

TEST_CASE("flow matrix") {
    geo::CountyTable t({county("a", 0, 0, 100, 1), county("b", 0, 1, 200, 1)});
    Eigen::MatrixXd d(2, 2);
    d << 0, 10, 10, 0;
    auto f = build_flow_matrix(t, d, 1.0);
    CHECK(f.raw(0, 1) == 10.0);
    CHECK(f.raw(1, 0) == 10.0);
    CHECK(f.raw(0, 0) == 0.0);
    CHECK(f.raw(1, 1) == 0.0);
    CHECK(f.balanced(0, 0) == -10.0);

    auto far = build_flow_matrix(t, d, 1e12);
    CHECK(far.raw.maxCoeff() < 1e-9);

    auto big = geo::synthetic_county_table(15, 2);
    auto g = build_flow_matrix(big, geo::distance_matrix(big), 1e4);
    CHECK(g.raw == g.raw.transpose());

    Eigen::MatrixXd zero_d = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_WITH_AS(build_flow_matrix(t, zero_d, 1.0), doctest::Contains("a"), std::invalid_argument);
}

TEST_CASE("balance flow") {
    Eigen::MatrixXd raw(2, 2);
    raw << 0, 2, 2, 0;
    Eigen::MatrixXd expected(2, 2);
    expected << -2, 2, 2, -2;
    CHECK(balance_flow(raw) == expected);
    CHECK(balance_flow(Eigen::MatrixXd::Zero(3, 3)).isZero(0.0));
    Rng rng(3);
    for (int k = 0; k < 50; ++k) {
        auto m = random_symmetric(8, rng, 1e6);
        auto b = balance_flow(m);
        CHECK(b.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-9 * m.cwiseAbs().maxCoeff());
    }
    Eigen::MatrixXd asym(2, 2);
    asym << 0, 1, 2, 0;
    CHECK_THROWS_AS(balance_flow(asym), std::invalid_argument);
}

TEST_CASE("mixing derivative") {
    SUBCASE("zero flow reduces to the single-population model bitwise") {
        CompartmentMatrix s{Eigen::MatrixXd(1, 4)};
        s.values << 900, 30, 100, 20;
        Eigen::VectorXd beta(1);
        beta << 0.5;
        auto d = mixing_derivative(s, FlowMatrix::zero(1), beta, 0.2, 0.1);
        auto ref = seir_derivative({900, 30, 100, 20}, {0.5, 0.2, 0.1}, 1050);
        for (int k = 0; k < 4; ++k) CHECK(d(0, k) == ref[static_cast<std::size_t>(k)]);
    }
    SUBCASE("identical fractions cancel the flow terms") {
        CompartmentMatrix s{Eigen::MatrixXd(2, 4)};
        s.values << 800, 50, 100, 50, 800, 50, 100, 50;
        Eigen::MatrixXd raw(2, 2);
        raw << 0, 37, 37, 0;
        FlowMatrix f{raw, balance_flow(raw)};
        Eigen::VectorXd beta = Eigen::VectorXd::Constant(2, 0.3);
        auto coupled = mixing_derivative(s, f, beta, 0.2, 0.1);
        auto decoupled = mixing_derivative(s, FlowMatrix::zero(2), beta, 0.2, 0.1);
        CHECK((coupled - decoupled).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("matrix form equals the per-county sums") {
        Rng rng(17);
        const int n = 3;
        CompartmentMatrix s{Eigen::MatrixXd(n, 4)};
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < 4; ++k) s.values(i, k) = rng.uniform(10, 1000);
        }
        auto raw = random_symmetric(n, rng, 50.0);
        FlowMatrix f{raw, balance_flow(raw)};
        Eigen::VectorXd beta(n);
        for (int i = 0; i < n; ++i) beta[i] = rng.uniform(0.1, 1.0);
        const double sigma = 0.25, gamma = 0.15;
        auto d = mixing_derivative(s, f, beta, sigma, gamma);
        for (int i = 0; i < n; ++i) {
            double p_i = 0;
            for (int k = 0; k < 4; ++k) p_i += s.values(i, k);
            double total = 0;
            for (int k = 0; k < 4; ++k) {
                double flow = 0;
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    double p_j = 0;
                    for (int q = 0; q < 4; ++q) p_j += s.values(j, q);
                    flow += raw(i, j) * s.values(j, k) / p_j - raw(j, i) * s.values(i, k) / p_i;
                }
                const double infection = beta[i] * s.values(i, 2) * s.values(i, 0) / p_i;
                double local = 0;
                if (k == 0) local = -infection;
                if (k == 1) local = infection - sigma * s.values(i, 1);
                if (k == 2) local = sigma * s.values(i, 1) - gamma * s.values(i, 2);
                if (k == 3) local = gamma * s.values(i, 2);
                CHECK(std::abs(d(i, k) - (flow + local)) <= 1e-10 * std::max(1.0, std::abs(flow + local)));
                total += d(i, k);
            }
            CHECK(std::abs(total) <= 1e-9 * p_i);
        }
    }
    SUBCASE("dimension mismatch") {
        CompartmentMatrix s{Eigen::MatrixXd::Ones(2, 4)};
        CHECK_THROWS_AS(mixing_derivative(s, FlowMatrix::zero(3), Eigen::VectorXd::Ones(2), 0.1, 0.1), DimensionError);
    }
}

TEST_CASE("euler step") {
    CompartmentMatrix s{Eigen::MatrixXd(1, 4)};
    s.values << 100, 5, 5, 0;
    CHECK(euler_step(s, Eigen::MatrixXd::Zero(1, 4), 0.5).values == s.values);

    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(1, 4);
    d(0, 0) = 10;
    d(0, 3) = -10;
    s.values(0, 3) = 50;
    CHECK(euler_step(s, d, 0.1).values(0, 0) == doctest::Approx(101.0).epsilon(1e-15));

    CHECK_THROWS_AS(euler_step(s, d, 0.0), std::domain_error);

    SUBCASE("clamping preserves the county total") {
        CompartmentMatrix c{Eigen::MatrixXd(1, 4)};
        c.values << 1000, 1, 2, 3;
        Eigen::MatrixXd over(1, 4);
        over << 0, -20, 0, 20;
        std::size_t events = 0;
        auto next = euler_step(c, over, 1.0, events);
        CHECK(events == 1);
        CHECK(next.values.minCoeff() >= 0.0);
        CHECK(next.values.sum() == doctest::Approx(1006.0).epsilon(1e-12));
    }
}

TEST_CASE("euler decay converges at first order") {
    const double gamma = 0.1;
    const std::size_t days = 11;
    CompartmentMatrix init{Eigen::MatrixXd(1, 4)};
    init.values << 0, 0, 1000, 0;
    auto run = [&](double h) {
        return integrate(init, FlowMatrix::zero(1), Eigen::VectorXd::Zero(1), 0.0, gamma, days, h);
    };
    auto error_vs_closed = [&](const Trajectory& tr) {
        double e = 0;
        for (std::size_t t = 0; t < days; ++t) {
            e = std::max(e, std::abs(tr.days[t].values(0, 2) - 1000.0 * std::exp(-gamma * static_cast<double>(t))));
        }
        return e;
    };
    const double ratio = error_vs_closed(run(0.5)) / error_vs_closed(run(0.25));
    CHECK(ratio >= 1.7);
    CHECK(ratio <= 2.3);
}

TEST_CASE("initial state sampling") {
    auto t = geo::synthetic_county_table(6, 1);
    MixParams p{1e5, 1e4, 0.2, 0.1, 0.0, 0.3};
    auto zero = sample_initial_state(t, p, 4);
    CHECK(zero.values.col(S) == t.populations());
    CHECK(zero.values.rightCols(3).isZero(0.0));

    p.lambda_E = 1e-3;
    auto a = sample_initial_state(t, p, 4);
    auto b = sample_initial_state(t, p, 4);
    CHECK(a.values == b.values);
    CHECK(a.values.col(R).isZero(0.0));
    CHECK(a.values.col(S).minCoeff() >= 0.0);
    CHECK((a.totals() - t.populations()).cwiseAbs().maxCoeff() == 0.0);

    geo::CountyTable one({county("x", 0, 0, 1000000, 10)});
    MixParams q{1e5, 1e4, 0.2, 0.1, 1e-4, 0.3};
    double sum = 0;
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
        auto s = sample_initial_state(one, q, derive_seed(99, static_cast<std::uint64_t>(k)));
        sum += s.values(0, E);
        REQUIRE(s.values(0, R) == 0.0);
    }
    CHECK(std::abs(sum / draws - 100.0) <= 3.0 * std::sqrt(100.0) / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("poisson sampler matches mean and variance on both branches") {
    for (double mean : {0.5, 7.0, 29.0, 31.0, 400.0}) {
        Rng rng(static_cast<std::uint64_t>(mean * 1000));
        const int n = 40000;
        double s = 0, s2 = 0;
        for (int k = 0; k < n; ++k) {
            const double x = static_cast<double>(rng.poisson(mean));
            s += x;
            s2 += x * x;
        }
        const double m = s / n;
        const double v = s2 / n - m * m;
        CHECK(std::abs(m - mean) <= 4.0 * std::sqrt(mean / n));
        CHECK(std::abs(v / mean - 1.0) < 0.05);
    }
    Rng rng(1);
    CHECK(rng.poisson(0.0) == 0u);
    CHECK_THROWS_AS(rng.poisson(-1.0), std::domain_error);
}

TEST_CASE("simulate scenario") {
    SUBCASE("no dynamics") {
        auto t = geo::synthetic_county_table(4, 2);
        MixParams p{1e5, 1e4, 0.0, 0.0, 0.0, 0.3};
        auto tr = simulate_scenario(t, FlowMatrix::zero(4), p, 10, 0.25, 1);
        CHECK(tr.cumulative.isZero(0.0));
        CHECK(tr.cumulative.cols() == 10);
    }
    SUBCASE("single county matches a scalar euler loop") {
        geo::CountyTable one({county("x", 0, 0, 50000, 400)});
        MixParams p{1e5, 1e3, 0.3, 0.1, 1e-3, 0.4};
        const double h = 0.25;
        auto tr = simulate_scenario(one, FlowMatrix::zero(1), p, 30, h, 12);
        auto init = sample_initial_state(one, p, 12);
        double s = init.values(0, 0), e = init.values(0, 1), i = init.values(0, 2), r = init.values(0, 3);
        const double beta = 400.0 / 1e3, N = 50000;
        for (std::size_t day = 0; day < 30; ++day) {
            CHECK(std::abs(tr.cumulative(0, static_cast<Eigen::Index>(day)) - (i + r)) <= 1e-10 * N);
            for (int k = 0; k < 4; ++k) {
                const double inf = beta * i * s / N;
                const double ds = -inf, de = inf - p.sigma * e, di = p.sigma * e - p.gamma * i, dr = p.gamma * i;
                s += h * ds;
                e += h * de;
                i += h * di;
                r += h * dr;
            }
        }
    }
    SUBCASE("population is conserved and national I+R never falls") {
        auto t = geo::synthetic_county_table(10, 8);
        auto flow = build_flow_matrix(t, geo::distance_matrix(t), 2e4);
        MixParams p{2e4, 2e3, 0.3, 0.1, 1e-4, 0.3};
        auto tr = simulate_scenario(t, flow, p, 60, 0.25, 5);
        const auto pops = t.populations();
        double prev = -1;
        for (const auto& day : tr.days) {
            CHECK(((day.totals() - pops).cwiseAbs().array() <= 1e-6 * pops.array()).all());
            const double national = day.recorded().sum();
            CHECK(national >= prev - 1e-9);
            prev = national;
        }
        CHECK(tr.incidence.minCoeff() >= 0.0);
        CHECK(tr.incidence.col(5) == (tr.cumulative.col(5) - tr.cumulative.col(4)).cwiseMax(0.0));
    }
    SUBCASE("step must divide one day") {
        auto t = geo::synthetic_county_table(2, 2);
        MixParams p{1e5, 1e4, 0.1, 0.1, 0.0, 0.3};
        CHECK_THROWS(simulate_scenario(t, FlowMatrix::zero(2), p, 3, 0.3, 1));
    }
}

TEST_CASE("corpus generation") {
    auto t = geo::synthetic_county_table(5, 3);
    SUBCASE("degenerate ranges share parameters") {
        ParameterRanges r;
        r.mu_flow = {1e5, 1e5};
        r.mu_spread = {2e3, 2e3};
        r.sigma = {0.2, 0.2};
        r.gamma = {0.1, 0.1};
        r.lambda_E = {1e-5, 1e-5};
        r.lambda_I = {0.3, 0.3};
        auto c = generate_corpus(t, r, 3, 1, 10, 0.5, 1);
        for (const auto& s : c.scenarios) {
            CHECK(s.params.mu_flow == 1e5);
            CHECK(s.params.sigma == 0.2);
        }
    }
    SUBCASE("sizes and reproducibility") {
        auto a = generate_corpus(t, {}, 6, 2, 15, 0.25, 42, {.jobs = 3});
        auto b = generate_corpus(t, {}, 6, 2, 15, 0.25, 42, {.jobs = 1});
        CHECK(a.training().size() == 6);
        CHECK(a.validation().size() == 2);
        TempDir dir;
        write_corpus(dir.file("a.txt"), a);
        write_corpus(dir.file("b.txt"), b);
        CHECK(epiforge::testing::slurp(dir.file("a.txt")) == epiforge::testing::slurp(dir.file("b.txt")));
        auto back = read_corpus(dir.file("a.txt"));
        REQUIRE(back.scenarios.size() == 8);
        for (std::size_t k = 0; k < 8; ++k) {
            CHECK(back.scenarios[k].cumulative == a.scenarios[k].cumulative);
            CHECK(back.scenarios[k].params.mu_flow == a.scenarios[k].params.mu_flow);
            CHECK(back.scenarios[k].validation == a.scenarios[k].validation);
        }
        write_corpus(dir.file("c.txt"), back);
        CHECK(epiforge::testing::slurp(dir.file("c.txt")) == epiforge::testing::slurp(dir.file("a.txt")));
        auto other = generate_corpus(t, {}, 6, 2, 15, 0.25, 43);
        CHECK(other.scenarios[0].params.mu_flow != a.scenarios[0].params.mu_flow);
    }
    SUBCASE("invalid range") {
        ParameterRanges r;
        r.sigma = {0.5, 0.1};
        CHECK_THROWS(generate_corpus(t, r, 1, 0, 5, 0.25, 1));
    }
}

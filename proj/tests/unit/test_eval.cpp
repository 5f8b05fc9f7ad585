#include "doctest.h"

#include <cmath>

#include "epiforge/eval.hpp"
#include "epiforge/random.hpp"
#include "../support/temp_dir.hpp"

using namespace epiforge;
using namespace epiforge::eval;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

geo::CountyTable states_table(const std::vector<std::string>& states) {
    std::vector<geo::CountyRecord> rows;
    for (std::size_t i = 0; i < states.size(); ++i) {
        geo::CountyRecord r;
        r.id = std::to_string(10000 + i);
        r.name = "c" + std::to_string(i);
        r.state = states[i];
        r.lat = 40.0;
        r.lon = -90.0;
        r.population = 1000;
        rows.push_back(r);
    }
    return geo::CountyTable(rows);
}

}  // namespace

TEST_CASE("naive no-change benchmark") {
    Eigen::MatrixXd cum(2, 5);
    cum << 1, 2, 3, 4, 5, 10, 10, 12, 15, 20;
    auto f = naive_no_change(cum, 2, 14);
    CHECK(f.horizon() == 14);
    for (Eigen::Index i = 0; i < 14; ++i) CHECK(f.predictions.col(i) == cum.col(2));
    CHECK(f.deltas.isZero(0.0));
    CHECK(f.base == cum.col(2));
    CHECK_THROWS_AS(naive_no_change(cum, 5, 1), std::out_of_range);
    CHECK_THROWS(naive_no_change(cum, 1, 0));

    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(3, 20, 7.0);
    auto g = naive_no_change(flat, 5, 14);
    auto m = compute_metrics(g, flat.middleCols(6, 14), Eigen::VectorXd::Constant(3, 100));
    CHECK(m.mse == 0.0);
    CHECK(m.pcci == 0.0);

    for (std::uint64_t s = 0; s < 20; ++s) {
        const Eigen::MatrixXd truth = random_matrix(4, 3, s, 0, 1000);
        auto naive = naive_no_change(random_matrix(4, 6, 100 + s, 0, 1000), 5, 3);
        CHECK(compute_metrics(naive, truth, Eigen::VectorXd::Constant(4, 500)).pcci == 0.0);
    }
}

TEST_CASE("metric formulas") {
    SUBCASE("single county single day") {
        Eigen::VectorXd base(1);
        base << 1;
        Eigen::MatrixXd pred(1, 1), truth(1, 1);
        pred << 3;
        truth << 1;
        auto f = ForecastFrame::from_predictions(0, base, pred);
        Eigen::VectorXd pop(1);
        pop << 99;
        auto m = compute_metrics(f, truth, pop);
        CHECK(m.mse == 4.0);
        CHECK(m.mae == 2.0);
        CHECK(m.msle == doctest::Approx(std::pow(std::log(2.0), 2)).epsilon(1e-14));
        CHECK(m.msle == doctest::Approx(0.4805).epsilon(1e-4));
        CHECK(m.pcci == 2.0);
        CHECK(m.weighted_mse == doctest::Approx(4.0 / (std::log(100.0) * std::log(2.0))).epsilon(1e-14));
    }
    SUBCASE("perfect forecast") {
        const Eigen::MatrixXd truth = random_matrix(3, 4, 2, 10, 100);
        Eigen::VectorXd base = Eigen::VectorXd::Constant(3, 5.0);
        auto f = ForecastFrame::from_predictions(0, base, truth);
        auto m = compute_metrics(f, truth, Eigen::VectorXd::Constant(3, 10));
        CHECK(m.mse == 0.0);
        CHECK(m.msle == 0.0);
        CHECK(m.mae == 0.0);
        CHECK(m.pcci == doctest::Approx((truth.col(3) - base).sum()));
        CHECK(m.per_day_mse.isZero(0.0));
        CHECK(m.se_band.isZero(0.0));
    }
    SUBCASE("negative predictions are floored inside the log only") {
        Eigen::MatrixXd pred(1, 1), truth(1, 1);
        pred << -5;
        truth << 0;
        auto f = ForecastFrame::from_predictions(0, Eigen::VectorXd::Zero(1), pred);
        auto m = compute_metrics(f, truth, Eigen::VectorXd::Constant(1, 10));
        CHECK(m.msle == 0.0);
        CHECK(m.mse == 25.0);
        CHECK(m.pcci == -5.0);
    }
    SUBCASE("weighted mse lies within weight bounds and metrics are order invariant") {
        for (std::uint64_t s = 0; s < 30; ++s) {
            const Eigen::MatrixXd truth = random_matrix(5, 7, s, 0, 500);
            const Eigen::MatrixXd pred = random_matrix(5, 7, 50 + s, 0, 500);
            const Eigen::VectorXd pops = random_matrix(5, 1, 90 + s, 10, 1e6);
            const Eigen::VectorXd base = random_matrix(5, 1, 130 + s, 0, 100);
            auto m = compute_metrics(ForecastFrame::from_predictions(0, base, pred), truth, pops);
            Eigen::MatrixXd w(5, 7);
            for (Eigen::Index j = 0; j < 5; ++j)
                for (Eigen::Index i = 0; i < 7; ++i) w(j, i) = 1.0 / (std::log(pops[j] + 1.0) * std::log(i + 2.0));
            CHECK(m.weighted_mse <= m.mse * w.maxCoeff() * (1 + 1e-12));
            CHECK(m.weighted_mse >= m.mse * w.minCoeff() * (1 - 1e-12));
            CHECK(m.mse >= 0.0);
            CHECK(m.msle >= 0.0);
            CHECK(m.mae >= 0.0);

            Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
            perm.indices() << 3, 0, 4, 1, 2;
            auto p = compute_metrics(ForecastFrame::from_predictions(0, perm * base, perm * pred), perm * truth, perm * pops);
            CHECK(p.mse == doctest::Approx(m.mse).epsilon(1e-12));
            CHECK(p.weighted_mse == doctest::Approx(m.weighted_mse).epsilon(1e-12));
            CHECK(p.msle == doctest::Approx(m.msle).epsilon(1e-12));
            CHECK(p.mae == doctest::Approx(m.mae).epsilon(1e-12));
            CHECK(p.pcci == doctest::Approx(m.pcci).epsilon(1e-12));
        }
    }
    SUBCASE("shape mismatch") {
        auto f = ForecastFrame::from_predictions(0, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 3));
        CHECK_THROWS_AS(compute_metrics(f, Eigen::MatrixXd::Zero(3, 3), Eigen::VectorXd::Ones(3)), DimensionError);
        CHECK_THROWS_AS(compute_metrics(f, Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Ones(3)), DimensionError);
    }
}

TEST_CASE("per-day series") {
    Eigen::MatrixXd pred(2, 1), truth(2, 1);
    pred << 1, 3;
    truth << 1, 1;
    auto s = per_day_series(ForecastFrame::from_predictions(0, Eigen::VectorXd::Zero(2), pred), truth);
    CHECK(s.mse[0] == 2.0);
    CHECK(s.se[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK(s.band_lo[0] == doctest::Approx(2.0 - std::sqrt(2.0) / 5.0).epsilon(1e-14));
    CHECK(s.band_hi[0] == doctest::Approx(2.2828427).epsilon(1e-7));

    // iid squared errors: quadrupling the county count halves the band.
    auto width = [](Eigen::Index counties) {
        double total = 0.0;
        for (std::uint64_t rep = 0; rep < 200; ++rep) {
            const Eigen::MatrixXd p = random_matrix(counties, 1, 1000 + rep * 7 + static_cast<std::uint64_t>(counties), -1, 1);
            total += per_day_series(ForecastFrame::from_predictions(0, Eigen::VectorXd::Zero(counties), p),
                                    Eigen::MatrixXd::Zero(counties, 1)).se[0];
        }
        return total / 200.0;
    };
    CHECK(width(400) / width(1600) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("state ranking") {
    auto table = states_table({"AA", "AA", "BB", "CC", "CC"});
    const Eigen::MatrixXd truth = random_matrix(5, 3, 4, 100, 200);
    const Eigen::VectorXd base = Eigen::VectorXd::Constant(5, 100.0);
    auto naive = ForecastFrame::from_predictions(0, base, base.replicate(1, 3));
    SUBCASE("model equal to naive") {
        auto r = rank_states(naive, truth, table, naive);
        REQUIRE(r.rows.size() == 3);
        for (const auto& row : r.rows) CHECK(row.ratio == 1.0);
    }
    SUBCASE("hand-built ordering") {
        Eigen::MatrixXd pred = naive.predictions;
        // BB is forecast perfectly, CC halves its naive error, AA keeps it.
        pred.row(2) = truth.row(2);
        pred.row(3) = (truth.row(3) + naive.predictions.row(3)) / 2.0;
        pred.row(4) = (truth.row(4) + naive.predictions.row(4)) / 2.0;
        auto r = rank_states(ForecastFrame::from_predictions(0, base, pred), truth, table, naive);
        REQUIRE(r.rows.size() == 3);
        CHECK(r.rows[r.best].state == "BB");
        CHECK(r.rows[r.median].state == "CC");
        CHECK(r.rows[r.worst].state == "AA");
        CHECK(r.rows[1].ratio == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(r.rows[2].rank == 3);
    }
    SUBCASE("zero naive error") {
        auto one = states_table({"ZZ"});
        Eigen::MatrixXd t = Eigen::MatrixXd::Constant(1, 2, 100.0);
        auto n = ForecastFrame::from_predictions(0, Eigen::VectorXd::Constant(1, 100.0), t);
        auto r = rank_states(ForecastFrame::from_predictions(0, Eigen::VectorXd::Constant(1, 100.0), (t.array() + 1).matrix()), t,
                             one, n);
        REQUIRE(r.rows.size() == 1);
        CHECK(std::isinf(r.rows[0].ratio));
        CHECK(r.best == 0);
        CHECK(r.median == 0);
        CHECK(r.worst == 0);
    }
}

TEST_CASE("report files") {
    epiforge::testing::TempDir dir;
    const Eigen::MatrixXd truth = random_matrix(3, 4, 8, 0, 100);
    auto f = ForecastFrame::from_predictions(2, Eigen::VectorXd::Constant(3, 1.0), random_matrix(3, 4, 9, 0, 100));
    auto m = compute_metrics(f, truth, Eigen::VectorXd::Constant(3, 1000));
    write_metric_report(dir.file("m.json"), m, {{"model", "cleirnet"}});
    std::map<std::string, std::string> meta;
    auto back = read_metric_report(dir.file("m.json"), &meta);
    CHECK(back.mse == m.mse);
    CHECK(back.pcci == m.pcci);
    CHECK(back.per_day_mse == m.per_day_mse);
    CHECK(back.se_band == m.se_band);
    CHECK(meta.at("model") == "cleirnet");

    write_per_day_csv(dir.file("a.csv"), m, "s");
    write_per_day_csv(dir.file("b.csv"), back, "s");
    write_per_day_csv(dir.file("c.csv"), per_day_series(f, truth), "s");
    const auto a = epiforge::testing::slurp(dir.file("a.csv"));
    CHECK(a == epiforge::testing::slurp(dir.file("b.csv")));
    CHECK(a == epiforge::testing::slurp(dir.file("c.csv")));
    CHECK(a.rfind("# s\nday,mse,band_lo,band_hi\n1,", 0) == 0);

    StateRanking ranking;
    ranking.rows = {{"NY", 1, 2, 0.5, 1}, {"SC", 1, 0, std::numeric_limits<double>::infinity(), 2}};
    write_state_ranking(dir.file("r.csv"), ranking);
    CHECK(epiforge::testing::slurp(dir.file("r.csv")) == "state,ratio,rank\nNY,0.5,1\nSC,inf,2\n");
}

TEST_CASE("forecast csv round trip") {
    epiforge::testing::TempDir dir;
    const std::vector<std::string> ids{"01001", "01003"};
    const std::vector<std::string> dates{"5/18/20", "5/19/20", "5/20/20"};
    auto f = ForecastFrame::from_predictions(4, Eigen::VectorXd::Constant(2, 0.1), random_matrix(2, 3, 3, 0, 50));
    write_forecast_csv(dir.file("f.csv"), f, ids, dates, "hash=abc");
    std::vector<std::string> read_dates;
    auto g = read_forecast_csv(dir.file("f.csv"), ids, &read_dates);
    CHECK(read_dates == dates);
    CHECK(g.predictions == f.predictions);
    CHECK(g.deltas == f.deltas);
    CHECK((g.base - f.base).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(read_forecast_csv(dir.file("f.csv"), {"01001"}), UnknownIdError);
    CHECK_THROWS_AS(read_forecast_csv(dir.file("f.csv"), {"01001", "01003", "01005"}), DimensionError);
    CHECK_THROWS_AS(write_forecast_csv(dir.file("x.csv"), f, ids, {"a"}), DimensionError);
}

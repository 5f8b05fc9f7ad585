#include "doctest.h"

#include <cmath>
#include <numbers>

#include "epiforge/cleirnet.hpp"
#include "epiforge/geo.hpp"
#include "epiforge/random.hpp"
#include "epiforge/seir.hpp"
#include "../support/gradcheck.hpp"
#include "../support/temp_dir.hpp"

using namespace epiforge;
using namespace epiforge::cleirnet;

namespace {

CleirConfig tiny_config(Variant variant = Variant::II) {
    CleirConfig c;
    c.n_C = 3;
    c.n_TF = 2;
    c.n_D = 4;
    c.n_X = 2;
    c.n_F = 2;
    c.variant = variant;
    return c;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

Eigen::MatrixXd growing_series(Eigen::Index counties, Eigen::Index days, std::uint64_t seed) {
    Eigen::MatrixXd m(counties, days);
    Rng rng(seed);
    for (Eigen::Index j = 0; j < counties; ++j) {
        const double rate = rng.uniform(0.02, 0.08);
        for (Eigen::Index d = 0; d < days; ++d) m(j, d) = std::floor(10.0 * std::exp(rate * static_cast<double>(d)));
    }
    return m;
}

}  // namespace

TEST_CASE("parameter count") {
    CleirConfig one;
    one.n_TF = 1;
    one.n_C = 1;
    one.n_D = 1;
    one.n_X = 0;
    CHECK(count_parameters(one) == 4 * 4 + 4 * 3 * 2 + 2 + 2 + 2 + 2);
    CHECK(count_parameters(one) == CleirModel(one).parameters().parameter_count());

    auto cfg = tiny_config();
    CHECK(count_parameters(cfg) == CleirModel(cfg).parameters().parameter_count());
    auto v1 = tiny_config(Variant::I);
    CHECK(count_parameters(v1) == CleirModel(v1).parameters().parameter_count());

    CleirConfig table;
    table.n_TF = 2;
    table.n_D = 24;
    table.n_X = 6;
    table.n_C = 100;
    const auto at100 = count_parameters(table);
    table.n_C = 101;
    CHECK(count_parameters(table) - at100 == table.n_TF + 1);
    // 10945 from the ensemble summary table is reached only at 3336 counties.
    table.n_C = 3336;
    CHECK(count_parameters(table) == 10945);
    table.n_C = 3140;
    CHECK(count_parameters(table) != 10945);
}

TEST_CASE("zero network reproduces the no-change forecast bitwise") {
    for (auto variant : {Variant::I, Variant::II}) {
        CleirModel model(tiny_config(variant));
        Eigen::VectorXd cases(3);
        cases << 12.5, 0.0, 98765.25;
        auto [frame, next] = forward_horizon(model, cases, 40.0, BackboneState::zero(2), random_matrix(2, 3, 1, -1, 1));
        REQUIRE(frame.predictions.rows() == 3);
        REQUIRE(frame.predictions.cols() == 2);
        CHECK(frame.deltas.rows() == 3);
        CHECK(frame.deltas.cols() == 2);
        for (Eigen::Index i = 0; i < 2; ++i) CHECK(frame.predictions.col(i) == cases);
        CHECK(frame.deltas.isZero(0.0));
        CHECK(next.h0.isZero(0.0));
    }
}

TEST_CASE("cumulative chain matches a prefix sum of deltas") {
    auto cfg = tiny_config();
    cfg.n_F = 5;
    CleirModel model(cfg);
    model.initialize(3);
    Eigen::VectorXd cases(3);
    cases << 10, 200, 3000;
    BackboneState state{Eigen::VectorXd::Constant(2, 0.3), Eigen::VectorXd::Constant(2, -0.2),
                        Eigen::VectorXd::Constant(2, 0.1), Eigen::VectorXd::Constant(2, 0.4)};
    auto [frame, next] = forward_horizon(model, cases, 12.0, state, random_matrix(2, 3, 2, -1, 1));
    for (Eigen::Index j = 0; j < 3; ++j) {
        double running = cases[j];
        for (Eigen::Index i = 0; i < 5; ++i) {
            running += frame.deltas(j, i);
            CHECK(std::abs(frame.predictions(j, i) - running) <= 1e-9 * std::max(1.0, std::abs(running)));
            if (i > 0) CHECK(frame.predictions(j, i) - frame.predictions(j, i - 1) == frame.deltas(j, i));
        }
        CHECK(frame.predictions(j, 0) - cases[j] == frame.deltas(j, 0));
    }
}

TEST_CASE("forward dimension and finiteness checks") {
    CleirModel model(tiny_config());
    CHECK_THROWS_AS(forward_horizon(model, Eigen::VectorXd::Zero(4), 0.0, BackboneState::zero(2), Eigen::MatrixXd::Zero(2, 3)),
                    DimensionError);
    CHECK_THROWS_AS(forward_horizon(model, Eigen::VectorXd::Zero(3), 0.0, BackboneState::zero(3), Eigen::MatrixXd::Zero(2, 3)),
                    DimensionError);
    CHECK_THROWS_AS(forward_horizon(model, Eigen::VectorXd::Zero(3), 0.0, BackboneState::zero(2), Eigen::MatrixXd::Zero(3, 3)),
                    DimensionError);
    model.parameters().at("td.b").value(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(forward_horizon(model, Eigen::VectorXd::Zero(3), 0.0, BackboneState::zero(2), Eigen::MatrixXd::Zero(2, 3)),
                         doctest::Contains("time_distributed"), NonFiniteActivationError);
}

TEST_CASE("weighted mse loss") {
    Eigen::MatrixXd p = random_matrix(3, 4, 5, 0, 100);
    Eigen::VectorXd pops = Eigen::VectorXd::Constant(3, 5000);
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(3, 4);
    CHECK(*weighted_mse_loss(p, p, pops, ones) == 0.0);

    const double e = std::numbers::e;
    const double w = loss_weight(e * e - 1.0, e - 1.0);
    CHECK(w == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(w * 2.0 * 2.0 == doctest::Approx(2.0).epsilon(1e-14));

    for (int i = 1; i < 14; ++i) CHECK(loss_weight(1000.0, i + 1) < loss_weight(1000.0, i));

    Eigen::MatrixXd pred(1, 2), target(1, 2), mask(1, 2);
    pred << 3, 5;
    target << 1, 1;
    mask << 1, 0;
    Eigen::VectorXd pop(1);
    pop << 99;
    CHECK(*weighted_mse_loss(pred, target, pop, mask) == doctest::Approx(4.0 / (std::log(100.0) * std::log(2.0))).epsilon(1e-14));
    CHECK_FALSE(weighted_mse_loss(pred, target, pop, Eigen::MatrixXd::Zero(1, 2)).has_value());
}

TEST_CASE("target dropout mask") {
    CHECK(target_dropout_mask(4, 5, 0.0, 1).isOnes(0.0));
    auto m = target_dropout_mask(1000, 1000, 0.25, 9);
    const double zero_fraction = 1.0 - m.mean();
    CHECK(std::abs(zero_fraction - 0.25) <= 0.002);
    CHECK(target_dropout_mask(7, 3, 0.25, 4) == target_dropout_mask(7, 3, 0.25, 4));
    CHECK_THROWS(target_dropout_mask(2, 2, 1.0, 1));
}

TEST_CASE("gradients of the full network pass finite differences") {
    for (auto variant : {Variant::II, Variant::I}) {
        auto cfg = tiny_config(variant);
        CleirModel model(cfg);
        model.initialize(11);
        for (std::size_t k = 0; k < model.parameters().size(); ++k) {
            auto& v = model.parameters()[k].value;
            v += random_matrix(v.rows(), v.cols(), 100 + k, -0.3, 0.3);
        }
        const Eigen::MatrixXd features = random_matrix(2, 3, 12, -1, 1);
        Eigen::VectorXd cases(3);
        cases << 4, 0.5, 3;
        const Eigen::MatrixXd target = random_matrix(3, 2, 13, 0, 5);
        Eigen::VectorXd pops(3);
        pops << 1e4, 3e3, 2e5;
        const Eigen::MatrixXd weights = loss_weights(pops, 2);
        BackboneState state{random_matrix(2, 1, 14, -0.5, 0.5), random_matrix(2, 1, 15, -0.5, 0.5),
                            random_matrix(2, 1, 16, -0.5, 0.5), random_matrix(2, 1, 17, -0.5, 0.5)};
        auto objective = [&](nn::ParameterStore& store, bool grad) {
            nn::Tape tape(&store);
            auto out = forward_horizon(tape, model, cases, 30.0, state, features);
            auto loss = nn::weighted_sum(nn::square(nn::sub(out.predictions, tape.constant(target))), weights / 6.0);
            const double value = loss.scalar();
            if (grad) nn::reverse_gradients(tape, loss);
            const double penalty = nn::regularization_penalty(store, 5e-5, 5e-5, [](const std::string&) { return true; });
            if (!grad) store.zero_grad();
            return value + penalty;
        };
        auto r = epiforge::testing::gradient_check(model.parameters(), objective);
        INFO(r.worst_name);
        CHECK(r.checked == count_parameters(cfg));
        CHECK(r.worst_relative < 1e-4);
    }
}

TEST_CASE("time split") {
    Eigen::MatrixXd series = Eigen::MatrixXd::Zero(2, 50);
    auto s = time_split(series, 14, 1);
    CHECK(s.cumulative.cols() == 36);
    CHECK(s.valid_end == 22);
    CHECK(s.train_end == 21);
    CHECK(s.valid_end - 1 + 14 == 35);
    CHECK_THROWS(time_split(Eigen::MatrixXd::Zero(2, 20), 14, 1));
}

TEST_CASE("training on a constant series learns the no-change solution") {
    auto table = geo::synthetic_county_table(5, 3);
    Eigen::MatrixXd cum(5, 40);
    for (int j = 0; j < 5; ++j) cum.row(j).setConstant(100.0 * (j + 1));
    const Eigen::MatrixXd features = geo::build_feature_matrix(table).values.transpose();
    CleirConfig cfg;
    cfg.n_C = 5;
    cfg.n_TF = 2;
    cfg.n_D = 8;
    cfg.n_F = 3;
    cfg.max_epochs = 50;
    const std::vector<TrainingSequence> data{time_split(cum, 3, 1)};
    auto result = train_cleirnet(data, table.populations(), features, cfg, 1);
    CHECK(result.best_valid_loss < 1e-6);
    CHECK(result.log.size() <= 50);
    CHECK(validation_loss(result.model, data, table.populations(), features) == result.best_valid_loss);
}

TEST_CASE("training is deterministic and restores the best weights") {
    auto table = geo::synthetic_county_table(4, 8);
    const Eigen::MatrixXd series = growing_series(4, 40, 3);
    const Eigen::MatrixXd features = geo::build_feature_matrix(table).values.transpose();
    CleirConfig cfg;
    cfg.n_C = 4;
    cfg.n_TF = 2;
    cfg.n_D = 6;
    cfg.n_F = 4;
    cfg.max_epochs = 40;
    cfg.patience = 5;
    const std::vector<TrainingSequence> data{time_split(series, 4, 2)};
    auto a = train_cleirnet(data, table.populations(), features, cfg, 21);
    auto b = train_cleirnet(data, table.populations(), features, cfg, 21);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t e = 0; e < a.log.size(); ++e) {
        CHECK(a.log[e].train_loss == b.log[e].train_loss);
        CHECK(a.log[e].valid_loss == b.log[e].valid_loss);
    }
    CHECK(validation_loss(a.model, data, table.populations(), features) == a.best_valid_loss);
    CHECK(a.log[a.best_epoch].valid_loss == a.best_valid_loss);
    if (a.early_stopped) CHECK(a.log.size() == a.best_epoch + 1 + cfg.patience);

    auto c = train_cleirnet(data, table.populations(), features, cfg, 22);
    CHECK(c.log[0].train_loss != a.log[0].train_loss);
}

TEST_CASE("carrying state changes training") {
    auto table = geo::synthetic_county_table(6, 4);
    auto flow = seir::build_flow_matrix(table, geo::distance_matrix(table), 1e5);
    auto traj = seir::simulate_scenario(table, flow, {1e5, 1e3, 0.2, 0.08, 5e-5, 0.3}, 60, 0.25, 3);
    const Eigen::MatrixXd features = geo::build_feature_matrix(table).values.transpose();
    CleirConfig cfg;
    cfg.n_C = 6;
    cfg.n_TF = 3;
    cfg.n_D = 6;
    cfg.n_F = 5;
    cfg.max_epochs = 5;
    const std::vector<TrainingSequence> data{time_split(traj.cumulative, 5, 1)};
    auto carried = train_cleirnet(data, table.populations(), features, cfg, 5);
    cfg.carry_state = false;
    auto reset = train_cleirnet(data, table.populations(), features, cfg, 5);
    CHECK(carried.log.back().train_loss != reset.log.back().train_loss);
}

TEST_CASE("forecasting") {
    auto table = geo::synthetic_county_table(3, 2);
    const Eigen::MatrixXd series = growing_series(3, 30, 6);
    const Eigen::MatrixXd features = geo::build_feature_matrix(table).values.transpose();
    CleirConfig cfg;
    cfg.n_C = 3;
    cfg.n_F = 14;
    SUBCASE("zero parameters give the naive forecast") {
        CleirModel model(cfg);
        auto frame = forecast_cleirnet(model, series, features);
        CHECK(frame.horizon() == 14);
        CHECK(frame.base_day == 29);
        for (Eigen::Index i = 0; i < 14; ++i) CHECK(frame.predictions.col(i) == series.col(29));
    }
    SUBCASE("replay is deterministic and survives a checkpoint round trip") {
        CleirModel model(cfg);
        model.initialize(77);
        auto a = forecast_cleirnet(model, series, features);
        auto b = forecast_cleirnet(model, series, features);
        CHECK(a.predictions == b.predictions);
        epiforge::testing::TempDir dir;
        save_model(dir.file("m.ckpt"), model);
        auto loaded = load_model(dir.file("m.ckpt"));
        CHECK(loaded.config().n_F == 14);
        CHECK(forecast_cleirnet(loaded, series, features).predictions == a.predictions);
    }
    SUBCASE("series must have a day") {
        CleirModel model(cfg);
        CHECK_THROWS(forecast_cleirnet(model, Eigen::MatrixXd::Zero(3, 0), features));
    }
}

TEST_CASE("ensembles") {
    Eigen::VectorXd base = Eigen::VectorXd::Constant(2, 5.0);
    auto a = ForecastFrame::from_predictions(9, base, random_matrix(2, 3, 1, 5, 50));
    auto single = ensemble_forecasts({a});
    CHECK(single.predictions == a.predictions);
    auto shifted = ForecastFrame::from_predictions(9, base, (a.predictions.array() + 2.0).matrix());
    auto mean = ensemble_forecasts({a, shifted});
    CHECK((mean.predictions - (a.predictions.array() + 1.0).matrix()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(mean.predictions.col(2) - mean.predictions.col(1) == mean.deltas.col(2));

    auto other = ForecastFrame::from_predictions(9, Eigen::VectorXd::Zero(3), random_matrix(3, 3, 1, 0, 1));
    CHECK_THROWS_AS(ensemble_forecasts({a, other}), DimensionError);

    for (std::uint64_t trial = 0; trial < 200; ++trial) {
        const Eigen::MatrixXd truth = random_matrix(4, 5, 1000 + trial, 0, 100);
        std::vector<ForecastFrame> frames;
        double worst = 0.0;
        for (std::uint64_t k = 0; k < 5; ++k) {
            frames.push_back(ForecastFrame::from_predictions(0, Eigen::VectorXd::Zero(4), random_matrix(4, 5, trial * 10 + k, 0, 100)));
            worst = std::max(worst, (frames.back().predictions - truth).array().square().mean());
        }
        const double ens = (ensemble_forecasts(frames).predictions - truth).array().square().mean();
        CHECK(ens <= worst);
    }
}

TEST_CASE("config json round trip") {
    auto cfg = tiny_config(Variant::I);
    cfg.output_scale = 123.25;
    cfg.carry_state = false;
    auto back = config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(back.variant == Variant::I);
}

#include "doctest.h"

#include <cmath>

#include "epiforge/geo.hpp"
#include "epiforge/tdefsi.hpp"
#include "../support/gradcheck.hpp"
#include "../support/temp_dir.hpp"

using namespace epiforge;
using namespace epiforge::tdefsi;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

TdefsiConfig tiny(std::size_t K = 3) {
    TdefsiConfig c;
    c.k = 2;
    c.H_i = 4;
    c.H = 6;
    c.K = K;
    return c;
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& v) { return (1.0 / (1.0 + (-v.array()).exp())).matrix(); }

// Independent re-derivation of the stack, written against raw parameter arrays.
Eigen::VectorXd hand_trace(const TdefsiModel& m, const Eigen::VectorXd& y) {
    const auto& s = m.parameters();
    const auto k = m.config().k;
    const Eigen::Index h = static_cast<Eigen::Index>(m.config().H_i);
    std::vector<Eigen::VectorXd> hs(k, Eigen::VectorXd::Zero(h)), cs(k, Eigen::VectorXd::Zero(h));
    Eigen::VectorXd top;
    for (Eigen::Index t = 0; t < y.size(); ++t) {
        Eigen::VectorXd x = Eigen::VectorXd::Constant(1, y[t]);
        for (std::size_t l = 0; l < k; ++l) {
            const std::string p = "lstm" + std::to_string(l);
            const Eigen::VectorXd a = s.at(p + ".W_x").value * x + s.at(p + ".W_h").value * hs[l] + s.at(p + ".b").value;
            const Eigen::VectorXd i = sigmoid(a.segment(0, h));
            const Eigen::VectorXd f = sigmoid(a.segment(h, h));
            const Eigen::VectorXd g = a.segment(2 * h, h).array().tanh().matrix();
            const Eigen::VectorXd o = sigmoid(a.segment(3 * h, h));
            cs[l] = f.cwiseProduct(cs[l]) + i.cwiseProduct(g);
            hs[l] = o.cwiseProduct(cs[l].array().tanh().matrix());
            x = hs[l];
        }
        top = x;
    }
    const Eigen::VectorXd d = (s.at("hidden.W").value * top + s.at("hidden.b").value).cwiseMax(0.0);
    return s.at("output.W").value * d + s.at("output.b").value;
}

NormStats stats_of(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    NormStats s;
    s.min = lo;
    s.max = hi;
    for (Eigen::Index j = 0; j < lo.size(); ++j) s.degenerate.push_back(!(hi[j] > lo[j]));
    return s;
}

seir::ScenarioCorpus small_corpus(std::size_t n_train, std::size_t n_valid, std::uint64_t seed) {
    auto table = geo::synthetic_county_table(4, seed);
    seir::ParameterRanges ranges;
    ranges.lambda_E = {1e-5, 1e-4};
    return seir::generate_corpus(table, ranges, n_train, n_valid, 30, 0.5, seed);
}

}  // namespace

TEST_CASE("normalization") {
    SUBCASE("all zero series") {
        auto d = normalize_dataset(Eigen::MatrixXd::Zero(3, 5));
        CHECK(d.y.isZero(0.0));
        CHECK(d.y_prime.isZero(0.0));
        CHECK(d.stats.degenerate == std::vector<bool>{true, true, true});
        CHECK(denormalize(d.y_prime, d.stats).isZero(0.0));
    }
    SUBCASE("single county") {
        Eigen::MatrixXd raw(1, 2);
        raw << 1, 3;
        auto d = normalize_dataset(raw);
        CHECK(d.y_prime(0, 0) == 0.0);
        CHECK(d.y_prime(0, 1) == 1.0);
        CHECK(d.y[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
        CHECK(d.y[1] == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    }
    SUBCASE("round trip") {
        const Eigen::MatrixXd raw = random_matrix(6, 40, 3, 0, 5000);
        auto d = normalize_dataset(raw);
        CHECK(d.y_prime.minCoeff() >= 0.0);
        CHECK(d.y_prime.maxCoeff() <= 1.0);
        CHECK((denormalize(d.y_prime, d.stats) - raw).cwiseAbs().maxCoeff() <= 1e-9 * raw.cwiseAbs().maxCoeff());
    }
    SUBCASE("training window") {
        Eigen::MatrixXd raw(1, 3);
        raw << 2, 4, 10;
        auto d = normalize_dataset(raw, 2);
        CHECK(d.stats.max[0] == 4.0);
        CHECK(d.y_prime(0, 2) == 4.0);
    }
    SUBCASE("stats over several series") {
        Eigen::MatrixXd a(1, 2), b(1, 2);
        a << 3, 5;
        b << 1, 4;
        auto s = fit_norm_stats({&a, &b});
        CHECK(s.min[0] == 1.0);
        CHECK(s.max[0] == 5.0);
        Eigen::MatrixXd c(2, 1);
        CHECK_THROWS_AS(fit_norm_stats({&a, &c}), DimensionError);
    }
}

TEST_CASE("forward pass") {
    SUBCASE("zero parameters") {
        TdefsiModel model(tiny());
        auto z = lonly_predict(model, Eigen::VectorXd::LinSpaced(7, 0.0, 3.0));
        CHECK(z.size() == 4);
        CHECK(z.isZero(0.0));
    }
    SUBCASE("matches a hand trace") {
        TdefsiModel model(tiny());
        model.initialize(9);
        for (std::size_t k = 0; k < model.parameters().size(); ++k) {
            auto& v = model.parameters()[k].value;
            v += random_matrix(v.rows(), v.cols(), 50 + k, -0.2, 0.2);
        }
        const Eigen::VectorXd y = random_matrix(6, 1, 4, 0, 4);
        const Eigen::VectorXd expected = hand_trace(model, y);
        CHECK((lonly_predict(model, y) - expected).cwiseAbs().maxCoeff() < 1e-10);
        nn::Tape tape(&model.parameters());
        auto seq = lonly_sequence(tape, model, y);
        REQUIRE(seq.size() == 6);
        CHECK((seq[2].value() - hand_trace(model, y.head(3))).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("dropout only in training mode") {
        TdefsiModel model(tiny());
        model.initialize(2);
        const Eigen::VectorXd y = random_matrix(5, 1, 8, 0, 3);
        nn::Tape a(&model.parameters());
        Rng rng(1);
        auto dropped = lonly_forward(a, model, y, &rng).value();
        CHECK((dropped - lonly_predict(model, y)).cwiseAbs().maxCoeff() > 0.0);
        nn::Tape b(&model.parameters());
        Rng same(1);
        CHECK(lonly_forward(b, model, y, &same).value() == dropped);
    }
    SUBCASE("empty window") {
        TdefsiModel model(tiny());
        CHECK_THROWS(lonly_predict(model, Eigen::VectorXd(0)));
    }
}

TEST_CASE("spatial regularizer") {
    Eigen::VectorXd lo(2), hi(2);
    lo << 1, 0;
    hi << 3, 8;
    const auto stats = stats_of(lo, hi);
    Eigen::VectorXd z(3);
    // Counties denormalize to 2 and 8.
    z << std::log(10.0), 0.5, 1.0;
    CHECK(phi_regularizer(z, stats) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    z << 0.0, 1.0, 2.0 / 8.0;
    CHECK(phi_regularizer(z, stats) == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(phi_regularizer(z, stats, true) == doctest::Approx(0.25).epsilon(1e-14));
    z << 0.3, 0.2, 0.1;
    CHECK(phi_regularizer(z, stats) > 0.0);
    for (std::uint64_t s = 0; s < 50; ++s) CHECK(phi_regularizer(random_matrix(3, 1, s, -5, 5), stats) >= 0.0);
    bool clipped = false;
    z << 60.0, 0.0, 0.0;
    CHECK(std::isfinite(phi_regularizer(z, stats, false, &clipped)));
    CHECK(clipped);
    CHECK(phi_regularizer(z, stats) == doctest::Approx(std::exp(50.0) - 1.0));

    nn::Tape tape;
    z << 1.2, 0.4, -0.3;
    CHECK(phi_regularizer(tape.constant(z), stats, false).scalar() == doctest::Approx(phi_regularizer(z, stats)).epsilon(1e-14));
    CHECK(phi_regularizer(tape.constant(z), stats, true).scalar() == doctest::Approx(phi_regularizer(z, stats, true)).epsilon(1e-14));
    CHECK_THROWS_AS(phi_regularizer(Eigen::VectorXd::Zero(2), stats), DimensionError);
}

TEST_CASE("non-negativity regularizer") {
    CHECK(nonneg_regularizer(Eigen::VectorXd::LinSpaced(4, 0.0, 3.0)) == 0.0);
    Eigen::VectorXd z(2);
    z << -1, 2;
    CHECK(nonneg_regularizer(z) == 1.0);
    const double single = nonneg_regularizer(z);
    z[0] = -2;
    CHECK(nonneg_regularizer(z) == 2.0 * single);
    nn::Tape tape;
    CHECK(nonneg_regularizer(tape.constant(z)).scalar() == 2.0);
}

TEST_CASE("loss reduces to mse without regularizers") {
    TdefsiConfig cfg = tiny();
    cfg.mu = 0.0;
    cfg.lambda = 0.0;
    TdefsiModel model(cfg);
    model.initialize(4);
    const Eigen::MatrixXd inc = random_matrix(3, 12, 6, 0, 50);
    const auto stats = normalize_dataset(inc).stats;
    const auto seq = prepare_sequence(inc, stats);
    nn::Tape tape(&model.parameters());
    auto out = sequence_loss(tape, model, stats, seq, {false, true, true});
    double oracle = 0.0;
    for (Eigen::Index t = 1; t < 12; ++t) oracle += (hand_trace(model, seq.y.head(t)) - seq.z.col(t)).squaredNorm() / 4.0;
    oracle /= 11.0;
    CHECK(std::abs(out.loss.scalar() - oracle) <= 1e-12);
    CHECK(out.loss.scalar() == out.mse.scalar());

    TdefsiModel regular(tiny());
    regular.parameters().copy_values_from(model.parameters());
    nn::Tape t2(&regular.parameters());
    auto with = sequence_loss(t2, regular, stats, seq, {false, true, true});
    CHECK(with.mse.scalar() == out.mse.scalar());
    CHECK(with.loss.scalar() > with.mse.scalar());
}

TEST_CASE("gradients pass finite differences with both regularizers") {
    TdefsiModel model(tiny());
    model.initialize(31);
    for (std::size_t k = 0; k < model.parameters().size(); ++k) {
        auto& v = model.parameters()[k].value;
        v += random_matrix(v.rows(), v.cols(), 300 + k, -0.3, 0.3);
    }
    const Eigen::MatrixXd inc = random_matrix(3, 6, 7, 0, 30);
    const auto stats = normalize_dataset(inc).stats;
    const auto seq = prepare_sequence(inc, stats);
    TdefsiConfig cfg = tiny();
    cfg.mu = 0.01;
    cfg.lambda = 0.1;
    TdefsiModel heavy(cfg);
    heavy.parameters().copy_values_from(model.parameters());
    for (bool dropout : {false, true}) {
        auto objective = [&](nn::ParameterStore& store, bool grad) {
            nn::Tape tape(&store);
            Rng rng(5);
            auto out = sequence_loss(tape, heavy, stats, seq, {dropout, true, true}, &rng);
            const double value = out.loss.scalar();
            if (grad) nn::reverse_gradients(tape, out.loss);
            return value;
        };
        auto r = epiforge::testing::gradient_check(heavy.parameters(), objective);
        INFO(r.worst_name);
        CHECK(r.checked == count_tdefsi_parameters(cfg));
        CHECK(r.worst_relative < 1e-4);
    }
}

TEST_CASE("parameter count") {
    TdefsiConfig big;
    big.k = 2;
    big.H_i = 128;
    big.H = 256;
    big.K = 3140;
    CHECK(count_tdefsi_parameters(big) == 66560 + 131584 + 33024 + 257 * 3141);
    CHECK(count_tdefsi_parameters(big) == 1038405);
    auto cfg = tiny();
    CHECK(count_tdefsi_parameters(cfg) == TdefsiModel(cfg).parameters().parameter_count());
    cfg.K = 0;
    CHECK(count_tdefsi_parameters(cfg) == TdefsiModel(cfg).parameters().parameter_count());
    cfg.k = 3;
    CHECK(count_tdefsi_parameters(cfg) == TdefsiModel(cfg).parameters().parameter_count());
    big.H = 512;
    const auto doubled = count_tdefsi_parameters(big) - 66560 - 131584;
    CHECK(doubled == 129 * 512 + 513 * 3141);
}

TEST_CASE("training") {
    auto corpus = small_corpus(4, 2, 3);
    TdefsiConfig cfg;
    cfg.H_i = 6;
    cfg.H = 8;
    cfg.max_epochs = 6;
    auto arms = experiment_arms();
    SUBCASE("unregularized arm logs loss equal to mse") {
        auto r = tdefsi_train(corpus, cfg, arms[0].second, 1);
        REQUIRE(r.log.size() == 6);
        for (const auto& e : r.log) CHECK(e.train_loss == e.train_mse);
        CHECK(r.model.config().K == 4);
    }
    SUBCASE("same seed reproduces and best weights are restored") {
        auto a = tdefsi_train(corpus, cfg, arms[3].second, 7);
        auto b = tdefsi_train(corpus, cfg, arms[3].second, 7);
        REQUIRE(a.log.size() == b.log.size());
        for (std::size_t e = 0; e < a.log.size(); ++e) {
            CHECK(a.log[e].train_loss == b.log[e].train_loss);
            CHECK(a.log[e].valid_loss == b.log[e].valid_loss);
        }
        auto [mse, loss] = tdefsi_evaluate(a.model, a.stats, corpus.validation(), arms[3].second);
        CHECK(mse == a.log[a.best_epoch].valid_mse);
        CHECK(loss == a.log[a.best_epoch].valid_loss);
        auto row = arm_report("x", a);
        CHECK(row.valid_loss == loss);
        CHECK(row.train_loss >= row.train_mse);
    }
    SUBCASE("patience") {
        cfg.max_epochs = 200;
        cfg.patience = 2;
        cfg.lr = 0.2;
        auto r = tdefsi_train(corpus, cfg, arms[0].second, 3);
        CHECK(r.early_stopped);
        CHECK(r.log.size() == r.best_epoch + 3);
    }
    SUBCASE("empty corpus") {
        seir::ScenarioCorpus empty;
        CHECK_THROWS(tdefsi_train(empty, cfg, arms[0].second, 1));
    }
}

TEST_CASE("autoregressive forecast") {
    TdefsiModel model(tiny());
    const Eigen::MatrixXd inc = random_matrix(3, 10, 12, 2, 40);
    const auto d = normalize_dataset(inc);
    SUBCASE("zero parameters") {
        auto f = autoregressive_forecast(model, d.y, 14, d.stats);
        CHECK(f.national_log.size() == 14);
        CHECK(f.national_log.isZero(0.0));
        CHECK(f.national.isZero(0.0));
        for (Eigen::Index i = 0; i < 14; ++i) CHECK(f.counties.col(i) == d.stats.min);
    }
    model.initialize(8);
    SUBCASE("one step is one forward pass") {
        auto f = autoregressive_forecast(model, d.y, 1, d.stats);
        const Eigen::VectorXd z = lonly_predict(model, d.y);
        CHECK(std::abs(f.national_log[0] - z[0]) < 1e-12);
        CHECK((f.counties.col(0) - denormalize(z.tail(3), d.stats)).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("each step consumes the previous prediction") {
        auto f = autoregressive_forecast(model, d.y, 14, d.stats);
        CHECK(f.counties.cols() == 14);
        Eigen::VectorXd history = d.y;
        for (Eigen::Index i = 0; i < 14; ++i) {
            const Eigen::VectorXd z = lonly_predict(model, history);
            CHECK(std::abs(f.national_log[i] - z[0]) < 1e-12);
            history.conservativeResize(history.size() + 1);
            history[history.size() - 1] = z[0];
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS(autoregressive_forecast(model, d.y, 0, d.stats));
        CHECK_THROWS_AS(autoregressive_forecast(model, d.y, 2, normalize_dataset(Eigen::MatrixXd::Ones(2, 3)).stats),
                        DimensionError);
    }
    SUBCASE("cumulative frame") {
        auto f = autoregressive_forecast(model, d.y, 3, d.stats);
        Eigen::VectorXd base = Eigen::VectorXd::Constant(3, 100.0);
        auto frame = forecast_frame(f, base, 9);
        CHECK(frame.base_day == 9);
        CHECK((frame.predictions.col(2) - (base + f.counties.rowwise().sum())).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("persistence") {
    epiforge::testing::TempDir dir;
    TdefsiModel model(tiny());
    model.initialize(19);
    const auto d = normalize_dataset(random_matrix(3, 8, 2, 0, 9));
    save_model(dir.file("t.ckpt"), model, d.stats);
    auto [loaded, stats] = load_model(dir.file("t.ckpt"));
    CHECK(stats.min == d.stats.min);
    CHECK(stats.max == d.stats.max);
    CHECK(lonly_predict(loaded, d.y) == lonly_predict(model, d.y));
    CHECK(to_json(loaded.config()) == to_json(model.config()));

    write_arm_report(dir.file("arms.csv"), {{"none", 1, 2, 1, 2}, {"dropout", 1.5, 2.5, 1.5, 2.5}}, "stamp");
    const auto text = epiforge::testing::slurp(dir.file("arms.csv"));
    CHECK(text.rfind("# stamp\narm,train_mse,valid_mse,train_loss,valid_loss\nnone,1,2,1,2\n", 0) == 0);
}

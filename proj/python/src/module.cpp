#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "epiforge/cleirnet.hpp"
#include "epiforge/dependency.hpp"
#include "epiforge/eval.hpp"
#include "epiforge/geo.hpp"
#include "epiforge/pipeline.hpp"
#include "epiforge/seir.hpp"
#include "epiforge/tdefsi.hpp"

namespace py = pybind11;
using namespace epiforge;

namespace {

pipeline::RunConfig load_config(const std::optional<std::string>& path, const std::optional<std::string>& text) {
    if (path && text) throw std::invalid_argument("pass either a config path or config text, not both");
    if (path) return pipeline::parse_config(*path);
    if (text) return pipeline::parse_config_text(*text);
    return {};
}

dependency::MiTransform transform_named(const std::string& name) {
    if (name == "raw") return dependency::MiTransform::Raw;
    if (name == "daily-difference") return dependency::MiTransform::DailyDifference;
    throw std::invalid_argument("transform must be 'raw' or 'daily-difference'");
}

py::dict metrics_dict(const eval::MetricReport& r) {
    py::dict d;
    d["mse"] = r.mse;
    d["weighted_mse"] = r.weighted_mse;
    d["msle"] = r.msle;
    d["mae"] = r.mae;
    d["pcci"] = r.pcci;
    d["per_day_mse"] = r.per_day_mse;
    d["se_band"] = r.se_band;
    return d;
}

}  // namespace

PYBIND11_MODULE(_epiforge, m) {
    m.doc() = "Epidemic simulation, forecasting and evaluation toolkit";
    m.attr("__version__") = EPIFORGE_VERSION;

    py::register_exception<pipeline::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

    m.def("subcommands", &pipeline::subcommands);
    m.def(
        "config_json",
        [](std::optional<std::string> path, std::optional<std::string> text) {
            return pipeline::config_json(load_config(path, text));
        },
        py::arg("path") = py::none(), py::arg("text") = py::none(),
        "Config with every default filled in, as JSON text.");
    m.def(
        "run",
        [](const std::string& command, std::optional<std::string> path, std::optional<std::string> text,
           std::optional<std::string> out, std::optional<std::uint64_t> seed, std::optional<std::size_t> jobs) {
            auto config = load_config(path, text);
            if (out) config.out = *out;
            if (seed) config.seed = *seed;
            if (jobs) config.jobs = *jobs;
            pipeline::Pipeline p(std::move(config));
            py::gil_scoped_release release;
            return p.run(command);
        },
        py::arg("command"), py::arg("config") = py::none(), py::arg("text") = py::none(), py::arg("out") = py::none(),
        py::arg("seed") = py::none(), py::arg("jobs") = py::none(),
        "Runs a pipeline subcommand (or 'run') and returns the artifact names written.");
    m.def("configure_logging", &pipeline::configure_logging, py::arg("level") = "");
    m.def("sha256_hex", [](const py::bytes& b) { return pipeline::sha256_hex(std::string(b)); });

    m.def(
        "simulate",
        [](std::size_t counties, std::size_t days, double h, std::uint64_t seed, double mu_flow, double mu_spread,
           double sigma, double gamma, double lambda_E, double lambda_I) {
            const auto table = geo::synthetic_county_table(counties, derive_seed(seed, "counties"));
            const seir::MixParams params{mu_flow, mu_spread, sigma, gamma, lambda_E, lambda_I};
            const auto flow = seir::build_flow_matrix(table, geo::distance_matrix(table), mu_flow);
            py::dict d;
            d["county_ids"] = table.ids();
            d["populations"] = table.populations();
            d["cumulative"] = seir::simulate_scenario(table, flow, params, days, h, seed).cumulative;
            return d;
        },
        py::arg("counties") = 20, py::arg("days") = 120, py::arg("h") = 0.25, py::arg("seed") = 1,
        py::arg("mu_flow") = 1e5, py::arg("mu_spread") = 1e3, py::arg("sigma") = 0.25, py::arg("gamma") = 0.1,
        py::arg("lambda_E") = 2e-5, py::arg("lambda_I") = 0.3,
        "Mixing-SEIR series over synthetic counties; cumulative is counties x days.");
    m.def("balance_flow", &seir::balance_flow, py::arg("flow"));

    m.def(
        "naive_no_change",
        [](const Eigen::MatrixXd& cumulative, std::size_t base_day, std::size_t horizon) {
            return eval::naive_no_change(cumulative, base_day, horizon).predictions;
        },
        py::arg("cumulative"), py::arg("base_day"), py::arg("horizon"));
    m.def(
        "compute_metrics",
        [](const Eigen::MatrixXd& predictions, const Eigen::VectorXd& base, const Eigen::MatrixXd& truth,
           const Eigen::VectorXd& populations) {
            auto frame = ForecastFrame::from_predictions(0, base, predictions);
            return metrics_dict(eval::compute_metrics(frame, truth, populations));
        },
        py::arg("predictions"), py::arg("base"), py::arg("truth"), py::arg("populations"));

    m.def(
        "estimate_mi",
        [](const Eigen::VectorXd& x, const Eigen::VectorXd& y, std::size_t bins, const std::string& transform,
           std::size_t min_length) {
            dependency::MiConfig c;
            c.bins = bins;
            c.transform = transform_named(transform);
            c.min_length = min_length;
            c.validate();
            return dependency::estimate_mi(x, y, c).nats;
        },
        py::arg("x"), py::arg("y"), py::arg("bins") = 8, py::arg("transform") = "daily-difference",
        py::arg("min_length") = 30);
    m.def("normalize_scores", [](const Eigen::VectorXd& raw) { return dependency::normalize_scores(raw).values; });
    m.def("select_counties", &dependency::select_counties, py::arg("normalized"), py::arg("delta"));

    m.def(
        "count_tdefsi_parameters",
        [](std::size_t k, std::size_t H_i, std::size_t H, std::size_t K) {
            tdefsi::TdefsiConfig c;
            c.k = k;
            c.H_i = H_i;
            c.H = H;
            c.K = K;
            return tdefsi::count_tdefsi_parameters(c);
        },
        py::arg("k"), py::arg("H_i"), py::arg("H"), py::arg("K"));
    m.def(
        "count_cleirnet_parameters",
        [](std::size_t n_C, std::size_t n_TF, std::size_t n_D, std::size_t n_X, std::size_t n_F,
           const std::string& variant) {
            cleirnet::CleirConfig c;
            c.n_C = n_C;
            c.n_TF = n_TF;
            c.n_D = n_D;
            c.n_X = n_X;
            c.n_F = n_F;
            if (variant == "I") c.variant = cleirnet::Variant::I;
            else if (variant != "II") throw std::invalid_argument("variant must be 'I' or 'II'");
            return cleirnet::count_parameters(c);
        },
        py::arg("n_C"), py::arg("n_TF"), py::arg("n_D"), py::arg("n_X") = 6, py::arg("n_F") = 14,
        py::arg("variant") = "II");
}

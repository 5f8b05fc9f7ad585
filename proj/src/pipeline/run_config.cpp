#include "epiforge/run_config.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include <openssl/evp.h>

#include "json.hpp"

namespace epiforge::pipeline {

namespace {

using Json = nlohmann::ordered_json;

class FieldTypeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Field {
    std::string key;
    std::function<void(const Json&)> read;
    std::function<Json()> write;
};

struct Section {
    std::string name;  ///< empty for top-level keys
    std::vector<Field> fields;
};

Field count_field(std::string key, std::size_t& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_number_unsigned()) throw FieldTypeError("expected a non-negative integer");
                ref = j.get<std::size_t>();
            },
            [&ref] { return Json(ref); }};
}

Field seed_field(std::string key, std::uint64_t& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_number_unsigned()) throw FieldTypeError("expected a non-negative integer");
                ref = j.get<std::uint64_t>();
            },
            [&ref] { return Json(ref); }};
}

Field number_field(std::string key, double& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_number()) throw FieldTypeError("expected a number");
                ref = j.get<double>();
            },
            [&ref] { return Json(ref); }};
}

Field bool_field(std::string key, bool& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_boolean()) throw FieldTypeError("expected true or false");
                ref = j.get<bool>();
            },
            [&ref] { return Json(ref); }};
}

Field string_field(std::string key, std::string& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_string()) throw FieldTypeError("expected a string");
                ref = j.get<std::string>();
            },
            [&ref] { return Json(ref); }};
}

Field strings_field(std::string key, std::vector<std::string>& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_array()) throw FieldTypeError("expected an array of strings");
                std::vector<std::string> v;
                for (const auto& e : j) {
                    if (!e.is_string()) throw FieldTypeError("expected an array of strings");
                    v.push_back(e.get<std::string>());
                }
                ref = std::move(v);
            },
            [&ref] { return Json(ref); }};
}

Field numbers_field(std::string key, std::vector<double>& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_array()) throw FieldTypeError("expected an array of numbers");
                std::vector<double> v;
                for (const auto& e : j) {
                    if (!e.is_number()) throw FieldTypeError("expected an array of numbers");
                    v.push_back(e.get<double>());
                }
                ref = std::move(v);
            },
            [&ref] { return Json(ref); }};
}

Field range_field(std::string key, seir::Range& ref) {
    return {std::move(key),
            [&ref](const Json& j) {
                if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
                    throw FieldTypeError("expected [lo, hi]");
                }
                ref = {j[0].get<double>(), j[1].get<double>()};
            },
            [&ref] { return Json::array({ref.lo, ref.hi}); }};
}

template <class E>
Field choice_field(std::string key, E& ref, std::vector<std::pair<std::string, E>> choices) {
    return {std::move(key),
            [&ref, choices](const Json& j) {
                std::string names;
                for (const auto& [name, value] : choices) {
                    if (j.is_string() && j.get<std::string>() == name) {
                        ref = value;
                        return;
                    }
                    names += (names.empty() ? "" : ", ") + name;
                }
                throw FieldTypeError("expected one of " + names);
            },
            [&ref, choices] {
                for (const auto& [name, value] : choices) {
                    if (value == ref) return Json(name);
                }
                return Json(nullptr);
            }};
}

std::vector<Section> layout(RunConfig& c) {
    auto& cl = c.cleirnet.model;
    auto& td = c.tdefsi.model;
    auto& mix = c.simulate.params;
    auto& rg = c.corpus.ranges;
    return {
        {"",
         {seed_field("seed", c.seed), string_field("out", c.out), count_field("jobs", c.jobs),
          strings_field("stages", c.stages)}},
        {"data",
         {string_field("counties", c.data.counties), string_field("cases", c.data.cases),
          string_field("adjacency", c.data.adjacency), count_field("synthetic_counties", c.data.synthetic_counties),
          count_field("knn", c.data.knn), bool_field("drop_aggregated_ny", c.data.drop_aggregated_ny),
          string_field("start_date", c.data.start_date)}},
        {"simulate",
         {count_field("days", c.simulate.days), number_field("h", c.simulate.h), number_field("mu_flow", mix.mu_flow),
          number_field("mu_spread", mix.mu_spread), number_field("sigma", mix.sigma), number_field("gamma", mix.gamma),
          number_field("lambda_E", mix.lambda_E), number_field("lambda_I", mix.lambda_I),
          number_field("sparsity_epsilon", c.simulate.sparsity_epsilon)}},
        {"corpus",
         {count_field("n_train", c.corpus.n_train), count_field("n_valid", c.corpus.n_valid),
          count_field("days", c.corpus.days), number_field("h", c.corpus.h), range_field("mu_flow", rg.mu_flow),
          range_field("mu_spread", rg.mu_spread), range_field("sigma", rg.sigma), range_field("gamma", rg.gamma),
          range_field("lambda_E", rg.lambda_E), range_field("lambda_I", rg.lambda_I),
          number_field("sparsity_epsilon", c.corpus.sparsity_epsilon)}},
        {"cleirnet",
         {count_field("n_TF", cl.n_TF), count_field("n_D", cl.n_D),
          choice_field("variant", cl.variant, {{"I", cleirnet::Variant::I}, {"II", cleirnet::Variant::II}}),
          number_field("target_dropout", cl.target_dropout), number_field("l1", cl.l1), number_field("l2", cl.l2),
          number_field("lr", cl.lr), count_field("patience", cl.patience), count_field("max_epochs", cl.max_epochs),
          number_field("output_scale", cl.output_scale), bool_field("carry_state", cl.carry_state),
          count_field("valid_days", cl.valid_days), count_field("ensemble", c.cleirnet.ensemble),
          string_field("train_on", c.cleirnet.train_on)}},
        {"tdefsi",
         {count_field("k", td.k), count_field("H_i", td.H_i), count_field("H", td.H), number_field("lambda", td.lambda),
          number_field("mu", td.mu), number_field("dropout", td.dropout), number_field("lr", td.lr),
          count_field("max_epochs", td.max_epochs), count_field("patience", td.patience),
          bool_field("literal_phi", td.literal_phi), strings_field("arms", c.tdefsi.arms)}},
        {"forecast",
         {count_field("horizon", c.forecast.horizon), strings_field("models", c.forecast.models),
          string_field("tdefsi_arm", c.forecast.tdefsi_arm)}},
        {"dependency",
         {count_field("bins", c.dependency.bins), count_field("min_length", c.dependency.min_length),
          choice_field("transform", c.dependency.transform,
                       {{"raw", dependency::MiTransform::Raw},
                        {"daily-difference", dependency::MiTransform::DailyDifference}})}},
        {"select", {number_field("delta", c.select.delta)}},
        {"sweep", {numbers_field("deltas", c.sweep.deltas), count_field("max_epochs", c.sweep.max_epochs)}},
    };
}

Json to_json_value(const RunConfig& config, bool runtime_keys) {
    auto& c = const_cast<RunConfig&>(config);
    Json out = Json::object();
    for (const auto& section : layout(c)) {
        Json target = Json::object();
        for (const auto& f : section.fields) {
            if (!runtime_keys && section.name.empty() && (f.key == "out" || f.key == "jobs")) continue;
            target[f.key] = f.write();
        }
        if (section.name.empty()) {
            for (auto& [k, v] : target.items()) out[k] = v;
        } else {
            out[section.name] = std::move(target);
        }
    }
    return out;
}

void read_fields(const Json& obj, const Section& section, std::vector<std::string>& problems) {
    const std::string prefix = section.name.empty() ? "" : section.name + ".";
    for (const auto& [key, value] : obj.items()) {
        const auto it = std::find_if(section.fields.begin(), section.fields.end(),
                                     [&](const Field& f) { return f.key == key; });
        if (it == section.fields.end()) {
            problems.push_back("unknown key '" + prefix + key + "'");
            continue;
        }
        try {
            it->read(value);
        } catch (const FieldTypeError& e) {
            problems.push_back(prefix + key + ": " + e.what());
        }
    }
}

template <class Check>
void check(std::vector<std::string>& problems, const std::string& where, Check&& body) {
    try {
        body();
    } catch (const std::exception& e) {
        problems.push_back(where + ": " + e.what());
    }
}

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

std::chrono::sys_days parse_iso_date(const std::string& iso) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (std::sscanf(iso.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3) {
        throw std::invalid_argument("'" + iso + "' is not a YYYY-MM-DD date");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw std::invalid_argument("'" + iso + "' is not a calendar date");
    return std::chrono::sys_days{ymd};
}

void validate(const RunConfig& c, std::vector<std::string>& problems) {
    const auto& names = subcommands();
    check(problems, "jobs", [&] { require(c.jobs >= 1, "must be >= 1"); });
    check(problems, "out", [&] { require(!c.out.empty(), "must not be empty"); });
    check(problems, "stages", [&] {
        require(!c.stages.empty(), "must list at least one subcommand");
        for (const auto& s : c.stages) {
            require(std::find(names.begin(), names.end(), s) != names.end(), "unknown subcommand '" + s + "'");
        }
    });
    check(problems, "data", [&] {
        require(c.data.cases.empty() || !c.data.counties.empty(), "cases needs a counties file for populations");
        require(c.data.synthetic_counties >= 2, "synthetic_counties must be >= 2");
        require(c.data.knn >= 1, "knn must be >= 1");
    });
    check(problems, "data.start_date", [&] { parse_iso_date(c.data.start_date); });
    check(problems, "simulate", [&] {
        seir::validate(c.simulate.params);
        require(c.simulate.h > 0.0 && c.simulate.h <= 1.0, "h must be in (0, 1]");
        require(c.simulate.days >= c.forecast.horizon + 2, "days must exceed the forecast horizon by at least 2");
        require(c.simulate.sparsity_epsilon >= 0.0, "sparsity_epsilon must be >= 0");
    });
    check(problems, "corpus", [&] {
        c.corpus.ranges.validate();
        require(c.corpus.n_train >= 1, "n_train must be >= 1");
        require(c.corpus.days >= 2, "days must be >= 2");
        require(c.corpus.h > 0.0 && c.corpus.h <= 1.0, "h must be in (0, 1]");
        require(c.corpus.sparsity_epsilon >= 0.0, "sparsity_epsilon must be >= 0");
    });
    check(problems, "cleirnet", [&] {
        c.cleirnet.model.validate();
        require(c.cleirnet.ensemble >= 1, "ensemble must be >= 1");
        require(c.cleirnet.train_on == "observed" || c.cleirnet.train_on == "corpus",
                "train_on must be observed or corpus");
    });
    check(problems, "tdefsi", [&] {
        auto model = c.tdefsi.model;
        model.K = std::max<std::size_t>(model.K, 1);
        model.validate();
        require(!c.tdefsi.arms.empty(), "arms must not be empty");
        std::set<std::string> known, seen;
        for (const auto& [name, flags] : tdefsi::experiment_arms()) known.insert(name);
        for (const auto& a : c.tdefsi.arms) {
            require(known.count(a) == 1, "unknown arm '" + a + "'");
            require(seen.insert(a).second, "arm '" + a + "' listed twice");
        }
    });
    check(problems, "forecast", [&] {
        require(c.forecast.horizon >= 1, "horizon must be >= 1");
        for (const auto& m : c.forecast.models) {
            require(m == "cleirnet" || m == "tdefsi", "unknown model '" + m + "'");
        }
        const bool uses_tdefsi =
            std::find(c.forecast.models.begin(), c.forecast.models.end(), "tdefsi") != c.forecast.models.end();
        require(!uses_tdefsi || std::find(c.tdefsi.arms.begin(), c.tdefsi.arms.end(), c.forecast.tdefsi_arm) !=
                                    c.tdefsi.arms.end(),
                "tdefsi_arm '" + c.forecast.tdefsi_arm + "' is not among tdefsi.arms");
    });
    check(problems, "dependency", [&] {
        c.dependency.validate();
        require(c.dependency.min_length >= 2, "min_length must be >= 2");
    });
    check(problems, "select", [&] { require(c.select.delta >= 0.0 && c.select.delta <= 1.0, "delta must be in [0, 1]"); });
    check(problems, "sweep", [&] {
        require(!c.sweep.deltas.empty(), "deltas must not be empty");
        require(std::is_sorted(c.sweep.deltas.begin(), c.sweep.deltas.end()), "deltas must be ascending");
        require(c.sweep.deltas.front() >= 0.0 && c.sweep.deltas.back() <= 1.0, "deltas must lie in [0, 1]");
        require(c.sweep.max_epochs >= 1, "max_epochs must be >= 1");
    });
}

std::string join_problems(const std::vector<std::string>& problems) {
    std::string s = "invalid config:";
    for (const auto& p : problems) s += "\n  " + p;
    return s;
}

std::string to_hex(const unsigned char* bytes, unsigned int n) {
    std::ostringstream out;
    out << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < n; ++i) out << std::setw(2) << static_cast<int>(bytes[i]);
    return out.str();
}

std::string two_digits(int v) { return (v < 10 ? "0" : "") + std::to_string(v); }

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

RunConfig::RunConfig() {
    cleirnet.model.n_TF = 3;
    cleirnet.model.n_D = 16;
    cleirnet.model.n_F = forecast.horizon;
}

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"simulate", "gen-corpus", "train-cleirnet", "train-tdefsi",
                                                "forecast", "evaluate",   "dependency",     "select",
                                                "sweep-delta", "report"};
    return names;
}

RunConfig parse_config_text(const std::string& text) {
    Json root;
    try {
        root = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError({std::string("not valid JSON: ") + e.what()});
    }
    if (!root.is_object()) throw ConfigError({"top level must be an object"});
    RunConfig config;
    auto sections = layout(config);
    std::vector<std::string> problems;
    Json top = Json::object();
    for (const auto& [key, value] : root.items()) {
        const auto it = std::find_if(sections.begin() + 1, sections.end(), [&](const Section& s) { return s.name == key; });
        if (it == sections.end()) {
            top[key] = value;
        } else if (!value.is_object()) {
            problems.push_back(key + ": expected a table of keys");
        } else {
            read_fields(value, *it, problems);
        }
    }
    read_fields(top, sections.front(), problems);
    config.cleirnet.model.n_F = config.forecast.horizon;
    validate(config, problems);
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return config;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config '" + path + "'"});
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

std::string config_json(const RunConfig& config) { return to_json_value(config, true).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) { return sha256_hex(to_json_value(config, false).dump()); }

std::vector<std::string> date_labels(const std::string& start_iso, std::size_t offset, std::size_t count) {
    const auto start = parse_iso_date(start_iso);
    std::vector<std::string> labels;
    labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::chrono::year_month_day ymd{start + std::chrono::days{static_cast<long>(offset + i)}};
        labels.push_back(std::to_string(static_cast<unsigned>(ymd.month())) + "/" +
                         std::to_string(static_cast<unsigned>(ymd.day())) + "/" +
                         two_digits(static_cast<int>(ymd.year()) % 100));
    }
    return labels;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &n, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    return to_hex(digest, n);
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return sha256_hex(buffer.str());
}

}  // namespace epiforge::pipeline

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "phasefold/error.hpp"
#include "phasefold/metrics.hpp"
#include "phasefold/selection.hpp"

#ifndef PHASEFOLD_VERSION
#define PHASEFOLD_VERSION "0.1.0"
#endif

namespace phasefold {

inline constexpr const char* kVersion = PHASEFOLD_VERSION;

inline bool operator==(const IterationDiagnostics& a, const IterationDiagnostics& b) {
    return a.iteration == b.iteration && a.target == b.target && a.log_alpha == b.log_alpha &&
           a.saturated == b.saturated && a.clipped_fraction == b.clipped_fraction &&
           a.calibration_sum == b.calibration_sum && a.nll_history == b.nll_history && a.final_nll == b.final_nll &&
           a.selected == b.selected && a.passes == b.passes && a.topped_up == b.topped_up && a.step1_s == b.step1_s &&
           a.step2a_s == b.step2a_s && a.step2b_s == b.step2b_s;
}

// NaN == NaN here: an empty bin on both sides is a match.
inline bool operator==(const ConditionalErrorCurve& a, const ConditionalErrorCurve& b) {
    auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!(x[i] == y[i] || (std::isnan(x[i]) && std::isnan(y[i])))) return false;
        }
        return true;
    };
    return a.count == b.count && same(a.bin_center, b.bin_center) && same(a.rel_err, b.rel_err) &&
           same(a.abs_err, b.abs_err);
}

/// Everything needed to reproduce and audit one run.
struct RunReport {
    std::string version = kVersion;
    std::string method;           // e.g. "predictor-corrector", "random", "stratified"
    std::string dataset;          // source path or generator name
    std::size_t rows = 0;
    std::size_t dims = 0;
    std::vector<std::size_t> degenerate_dims;  // constant columns, mapped to the range midpoint

    // config echo
    std::size_t n = 0;
    std::size_t working_size = 0;
    std::size_t iterations = 0;
    std::size_t calibration_size = 0;
    std::string estimator;
    std::size_t bins = 0;
    std::size_t train_steps = 0;
    std::size_t train_batch = 0;
    double learning_rate = 0.0;
    std::string carry;
    std::string calibration;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
    double density_floor = kLogDensityFloor;

    std::size_t realized = 0;
    std::vector<IterationDiagnostics> history;
    std::map<std::string, double> metrics;
    std::string rescale_fit;  // "parent", "subset" or empty
    std::map<std::string, ConditionalErrorCurve> curves;
    double wall_s = 0.0;

    friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Fill the config echo and history from a selection run.
inline RunReport make_report(const SelectionConfig& cfg, const SelectionResult& r, const Dataset& data,
                             std::string method) {
    RunReport rep;
    rep.method = std::move(method);
    rep.dataset = data.source();
    rep.rows = data.rows();
    rep.dims = data.dims();
    rep.degenerate_dims = fit_rescaler(data).degenerate_dims();
    rep.n = cfg.n;
    rep.working_size = cfg.working_size;
    rep.iterations = cfg.iterations;
    rep.calibration_size = cfg.resolved_calibration_size(data.rows());
    rep.estimator = to_string(cfg.estimator.kind);
    rep.bins = cfg.estimator.bins;
    rep.train_steps = cfg.estimator.train.steps;
    rep.train_batch = cfg.estimator.train.batch;
    rep.learning_rate = cfg.estimator.train.learning_rate;
    rep.carry = to_string(cfg.carry);
    rep.calibration = cfg.calibration == CalibrationMethod::ClosedForm ? "closed-form" : "bisection";
    rep.workers = cfg.workers;
    rep.seed = cfg.seed;
    rep.realized = r.realized;
    rep.history = r.iterations;
    return rep;
}

namespace detail {

using nlohmann::json;

inline json nullable(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(std::isnan(x) ? json(nullptr) : json(x));
    return a;
}

inline std::vector<double> from_nullable(const json& a) {
    std::vector<double> v;
    for (const auto& x : a) v.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
    return v;
}

inline void check_finite(double v, const std::string& field) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "report field '" + field + "' is not finite");
}

}  // namespace detail

/// Throws NonFiniteValue naming the first offending field. Empty curve bins
/// are missing values, not numbers, and are exempt.
inline void check_finite(const RunReport& r) {
    using detail::check_finite;
    check_finite(r.learning_rate, "learning_rate");
    check_finite(r.density_floor, "density_floor");
    check_finite(r.wall_s, "wall_s");
    for (const auto& d : r.history) {
        const std::string at = "iterations[" + std::to_string(d.iteration) + "].";
        check_finite(d.log_alpha, at + "log_alpha");
        check_finite(d.clipped_fraction, at + "clipped_fraction");
        check_finite(d.calibration_sum, at + "calibration_sum");
        check_finite(d.final_nll, at + "final_nll");
        for (double v : d.nll_history) check_finite(v, at + "nll_history");
        check_finite(d.step1_s, at + "step1_s");
        check_finite(d.step2a_s, at + "step2a_s");
        check_finite(d.step2b_s, at + "step2b_s");
    }
    for (const auto& [k, v] : r.metrics) check_finite(v, "metrics." + k);
    for (const auto& [k, c] : r.curves) {
        for (double v : c.bin_center) check_finite(v, "curves." + k + ".bin_center");
    }
}

inline nlohmann::json to_json(const RunReport& r) {
    using nlohmann::json;
    check_finite(r);
    json j;
    j["version"] = r.version;
    j["method"] = r.method;
    j["dataset"] = {{"source", r.dataset}, {"rows", r.rows}, {"dims", r.dims}, {"degenerate_dims", r.degenerate_dims}};
    j["config"] = {{"n", r.n},
                   {"M", r.working_size},
                   {"iterations", r.iterations},
                   {"calibration_size", r.calibration_size},
                   {"estimator", r.estimator},
                   {"bins", r.bins},
                   {"train_steps", r.train_steps},
                   {"train_batch", r.train_batch},
                   {"learning_rate", r.learning_rate},
                   {"carry", r.carry},
                   {"calibration", r.calibration},
                   {"workers", r.workers},
                   {"density_floor", r.density_floor}};
    j["seed"] = r.seed;
    j["realized"] = r.realized;
    json its = json::array();
    for (const auto& d : r.history) {
        its.push_back({{"iteration", d.iteration},
                       {"target", d.target},
                       {"log_alpha", d.log_alpha},
                       {"saturated", d.saturated},
                       {"clipped_fraction", d.clipped_fraction},
                       {"calibration_sum", d.calibration_sum},
                       {"nll_history", d.nll_history},
                       {"final_nll", d.final_nll},
                       {"selected", d.selected},
                       {"passes", d.passes},
                       {"topped_up", d.topped_up},
                       {"timings", {{"step1_s", d.step1_s}, {"step2a_s", d.step2a_s}, {"step2b_s", d.step2b_s}}}});
    }
    j["iterations"] = std::move(its);
    j["metrics"] = r.metrics;
    j["rescale_fit"] = r.rescale_fit;
    json curves = json::object();
    for (const auto& [k, c] : r.curves) {
        curves[k] = {{"bin_center", c.bin_center},
                     {"rel_err", detail::nullable(c.rel_err)},
                     {"abs_err", detail::nullable(c.abs_err)},
                     {"count", c.count}};
    }
    j["curves"] = std::move(curves);
    j["wall_s"] = r.wall_s;
    return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    try {
        r.version = j.at("version").get<std::string>();
        r.method = j.at("method").get<std::string>();
        const auto& ds = j.at("dataset");
        r.dataset = ds.at("source").get<std::string>();
        r.rows = ds.at("rows").get<std::size_t>();
        r.dims = ds.at("dims").get<std::size_t>();
        r.degenerate_dims = ds.at("degenerate_dims").get<std::vector<std::size_t>>();
        const auto& c = j.at("config");
        r.n = c.at("n").get<std::size_t>();
        r.working_size = c.at("M").get<std::size_t>();
        r.iterations = c.at("iterations").get<std::size_t>();
        r.calibration_size = c.at("calibration_size").get<std::size_t>();
        r.estimator = c.at("estimator").get<std::string>();
        r.bins = c.at("bins").get<std::size_t>();
        r.train_steps = c.at("train_steps").get<std::size_t>();
        r.train_batch = c.at("train_batch").get<std::size_t>();
        r.learning_rate = c.at("learning_rate").get<double>();
        r.carry = c.at("carry").get<std::string>();
        r.calibration = c.at("calibration").get<std::string>();
        r.workers = c.at("workers").get<std::size_t>();
        r.density_floor = c.at("density_floor").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.realized = j.at("realized").get<std::size_t>();
        for (const auto& d : j.at("iterations")) {
            IterationDiagnostics it;
            it.iteration = d.at("iteration").get<std::size_t>();
            it.target = d.at("target").get<std::size_t>();
            it.log_alpha = d.at("log_alpha").get<double>();
            it.saturated = d.at("saturated").get<bool>();
            it.clipped_fraction = d.at("clipped_fraction").get<double>();
            it.calibration_sum = d.at("calibration_sum").get<double>();
            it.nll_history = d.at("nll_history").get<std::vector<double>>();
            it.final_nll = d.at("final_nll").get<double>();
            it.selected = d.at("selected").get<std::size_t>();
            it.passes = d.at("passes").get<std::size_t>();
            it.topped_up = d.at("topped_up").get<std::size_t>();
            const auto& t = d.at("timings");
            it.step1_s = t.at("step1_s").get<double>();
            it.step2a_s = t.at("step2a_s").get<double>();
            it.step2b_s = t.at("step2b_s").get<double>();
            r.history.push_back(std::move(it));
        }
        r.metrics = j.at("metrics").get<std::map<std::string, double>>();
        r.rescale_fit = j.at("rescale_fit").get<std::string>();
        for (const auto& [k, v] : j.at("curves").items()) {
            ConditionalErrorCurve curve;
            curve.bin_center = v.at("bin_center").get<std::vector<double>>();
            curve.rel_err = detail::from_nullable(v.at("rel_err"));
            curve.abs_err = detail::from_nullable(v.at("abs_err"));
            curve.count = v.at("count").get<std::vector<std::size_t>>();
            r.curves.emplace(k, std::move(curve));
        }
        r.wall_s = j.at("wall_s").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("bad report: ") + e.what());
    }
    check_finite(r);
    return r;
}

inline std::string dump_report(const RunReport& r) { return to_json(r).dump(2); }

inline RunReport parse_report(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("report is not JSON: ") + e.what());
    }
    return report_from_json(j);
}

inline void save_report(const RunReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
    out << dump_report(r) << '\n';
    if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

inline RunReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_report(text);
}

}  // namespace phasefold

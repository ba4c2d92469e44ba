#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "phasefold/baselines.hpp"
#include "phasefold/generators.hpp"
#include "phasefold/io.hpp"
#include "phasefold/metrics.hpp"
#include "phasefold/report.hpp"
#include "phasefold/selection.hpp"

namespace phasefold {

/// Mean and sample standard deviation of per-repetition values.
struct Ensemble {
    std::vector<double> values;

    double mean() const {
        if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    double stddev() const {
        if (values.size() < 2) return 0.0;
        const double m = mean();
        double s = 0.0;
        for (double v : values) s += (v - m) * (v - m);
        return std::sqrt(s / static_cast<double>(values.size() - 1));
    }
    std::string summary(int digits = 4) const {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(digits);
        os << mean() << " ± " << stddev();
        return os.str();
    }
};

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = {"fig2",        "table1-ordering", "scaling", "nll",
                                                   "conditional-error", "sensitivity", "scatter"};
    return names;
}

/// One experiment. Sizes default to the full protocol; tests shrink them.
struct ExperimentSpec {
    std::string name;
    std::uint64_t seed = 0;
    std::size_t repetitions = 5;
    std::string out_dir = ".";
    std::string dataset;                 // generator name; empty picks the experiment's own
    std::size_t rows = 1000000;          // N
    std::vector<std::size_t> sizes = {1000};  // n values
    std::size_t working_size = 100000;   // M
    std::size_t iterations = 2;
    std::size_t clusters = 40;                                    // scatter
    std::vector<std::size_t> cluster_sweep = {20, 40, 80, 160};   // ordering reports the best
    std::vector<std::size_t> row_sweep = {100000, 1000000};       // scaling
    std::vector<std::size_t> working_sweep = {10000, 100000};     // sensitivity
    std::vector<std::size_t> worker_sweep = {1, 2, 4};            // strong and weak scaling
    std::size_t workers = 1;
    EstimatorConfig estimator;
    ScoreCarry carry = ScoreCarry::Calibrated;
    std::size_t histogram_bins = 40;     // fig2 output histogram
};

inline void validate(const ExperimentSpec& s) {
    bool known = false;
    for (const auto& n : experiment_names()) known = known || n == s.name;
    if (!known) throw Error(ErrorCode::InvalidArgument, "unknown experiment '" + s.name + "'");
    if (s.repetitions < 1) throw Error(ErrorCode::InvalidArgument, "need at least one repetition");
    if (s.sizes.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one sample size");
    for (std::size_t n : s.sizes) {
        if (n < 2 || n > s.rows) throw Error(ErrorCode::InvalidArgument, "sample sizes must satisfy 2 <= n <= N");
    }
    if (s.working_size < 1 || s.working_size > s.rows) throw Error(ErrorCode::InvalidArgument, "need 1 <= M <= N");
    if (s.iterations < 1) throw Error(ErrorCode::InvalidArgument, "need at least one iteration");
}

/// Seed for (cell, repetition): independent of how many cells run before it.
inline std::uint64_t cell_seed(std::uint64_t master, const std::string& cell, std::size_t rep) {
    return rng::derive(rng::derive(master, rng::tag(cell)), rep);
}

/// One row of the summary CSV.
struct CellRow {
    std::string method;
    std::size_t n = 0;
    std::size_t dims = 0;
    std::size_t rows = 0;
    std::size_t working_size = 0;
    std::size_t iterations = 0;
    std::string metric;
    Ensemble value;
    double reference = std::numeric_limits<double>::quiet_NaN();  // normalizer for the normalized column
    Ensemble step1_s, step2a_s, step2b_s;

    CellRow() = default;
    CellRow(std::string method_, std::size_t n_, std::size_t dims_, std::size_t rows_, std::size_t working_size_,
            std::size_t iterations_, std::string metric_)
        : method(std::move(method_)), n(n_), dims(dims_), rows(rows_), working_size(working_size_),
          iterations(iterations_), metric(std::move(metric_)) {}
};

struct CellFailure {
    std::string cell;
    std::size_t repetition = 0;
    std::string error;
};

struct ExperimentOutput {
    std::vector<CellRow> rows;
    std::vector<std::string> files;
    std::vector<CellFailure> failures;
};

namespace bench {

inline std::string path_in(const ExperimentSpec& s, const std::string& file) {
    return (std::filesystem::path(s.out_dir) / file).string();
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
    return out;
}

inline void write_rows(const ExperimentSpec& s, ExperimentOutput& o) {
    const std::string path = path_in(s, s.name + ".csv");
    auto out = open_out(path);
    out << "experiment,method,n,D,N,M,iters,metric,reps,mean,std,normalized_mean,step1_s,step2a_s,step2b_s\n";
    for (const auto& r : o.rows) {
        const double norm = std::isfinite(r.reference) && r.reference != 0.0 ? r.value.mean() / r.reference
                                                                              : std::numeric_limits<double>::quiet_NaN();
        auto cell = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string(); };
        out << s.name << ',' << r.method << ',' << r.n << ',' << r.dims << ',' << r.rows << ',' << r.working_size
            << ',' << r.iterations << ',' << r.metric << ',' << r.value.values.size() << ',' << cell(r.value.mean())
            << ',' << cell(r.value.stddev()) << ',' << cell(norm) << ',' << cell(r.step1_s.mean()) << ','
            << cell(r.step2a_s.mean()) << ',' << cell(r.step2b_s.mean()) << '\n';
    }
    o.files.push_back(path);
}

inline void write_failures(const ExperimentSpec& s, ExperimentOutput& o) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& f : o.failures) j.push_back({{"cell", f.cell}, {"repetition", f.repetition}, {"error", f.error}});
    const std::string path = path_in(s, s.name + ".failures.json");
    auto out = open_out(path);
    out << j.dump(2) << '\n';
    o.files.push_back(path);
}

/// Run fn(rep, seed) for each repetition, logging failures instead of
/// aborting the experiment.
template <class F>
void repeat(const ExperimentSpec& s, const std::string& cell, ExperimentOutput& o, F&& fn) {
    for (std::size_t rep = 0; rep < s.repetitions; ++rep) {
        try {
            fn(rep, cell_seed(s.seed, cell, rep));
        } catch (const std::exception& e) {
            o.failures.push_back({cell, rep, e.what()});
        }
    }
}

inline SelectionConfig selection_config(const ExperimentSpec& s, std::size_t n, std::size_t iterations,
                                        std::uint64_t seed) {
    SelectionConfig c;
    c.n = n;
    c.working_size = s.working_size;
    c.iterations = iterations;
    c.estimator = s.estimator;
    c.carry = s.carry;
    c.seed = seed;
    c.workers = s.workers;
    return c;
}

inline void add_timings(CellRow& row, const SelectionResult& r) {
    double s1 = 0.0, s2a = 0.0, s2b = 0.0;
    for (const auto& d : r.iterations) {
        s1 += d.step1_s;
        s2a += d.step2a_s;
        s2b += d.step2b_s;
    }
    row.step1_s.values.push_back(s1);
    row.step2a_s.values.push_back(s2a);
    row.step2b_s.values.push_back(s2b);
}

inline Dataset make_data(const ExperimentSpec& s, const std::string& fallback, std::size_t rows) {
    const std::string name = s.dataset.empty() ? fallback : s.dataset;
    return generate(named_generator(name, rows), rng::derive(s.seed, rng::tag("data")));
}

// Histogram of the selected values over [-4, 4] for the 1D exact-pdf case.
inline void fig2(const ExperimentSpec& s, ExperimentOutput& o) {
    const auto spec = std::get<GaussianSpec>(named_generator("normal1d", s.rows));
    const Dataset data = generate(spec, rng::derive(s.seed, rng::tag("data")));
    const auto log_pdf = gaussian_log_pdf(spec);
    for (std::size_t n : s.sizes) {
        const std::string cell = "fig2/n=" + std::to_string(n);
        const auto profile = exact_pdf_acceptance(log_pdf, data, static_cast<double>(n), s.workers);
        const auto probs = profile.probabilities();
        const std::size_t B = s.histogram_bins;
        const double lo = -4.0, hi = 4.0, w = (hi - lo) / static_cast<double>(B);
        std::vector<double> counts(B, 0.0);
        CellRow row{"exact-pdf", n, 1, s.rows, s.rows, 1, "selected"};
        repeat(s, cell, o, [&](std::size_t, std::uint64_t seed) {
            const auto pass = select_pass(probs, n, seed, 100, s.workers);
            for (std::size_t i : pass.indices) {
                const double x = data(i, 0);
                if (x < lo || x >= hi) continue;
                ++counts[static_cast<std::size_t>((x - lo) / w)];
            }
            row.value.values.push_back(static_cast<double>(pass.indices.size()));
        });
        const std::string path = path_in(s, "fig2_n" + std::to_string(n) + ".csv");
        auto out = open_out(path);
        out << "bin_center,mean_count,density,clipped\n";
        const double reps = static_cast<double>(s.repetitions);
        for (std::size_t b = 0; b < B; ++b) {
            const double c = lo + (static_cast<double>(b) + 0.5) * w;
            // A bin counts as clipped when the exact acceptance there is 1.
            const bool clipped = calibrated_probability(-log_pdf(std::span<const double>(&c, 1)), profile.calibration) >= 1.0;
            out << io::format_double(c) << ',' << io::format_double(counts[b] / reps) << ','
                << io::format_double(counts[b] / (reps * static_cast<double>(n) * w)) << ',' << (clipped ? 1 : 0)
                << '\n';
        }
        o.files.push_back(path);
        o.rows.push_back(std::move(row));
    }
}

inline void ordering(const ExperimentSpec& s, ExperimentOutput& o) {
    const Dataset data = make_data(s, "mixture", s.rows);
    const ScalingTransform scaler = fit_rescaler(data);
    const std::size_t max_it = std::max<std::size_t>(s.iterations, 3);
    for (std::size_t n : s.sizes) {
        std::vector<CellRow> algo(max_it);
        for (std::size_t k = 0; k < max_it; ++k) {
            algo[k] = CellRow{k == 0 ? "predictor" : "predictor-corrector", n, data.dims(), data.rows(),
                              s.working_size, k + 1, "distance_criterion"};
        }
        CellRow random{"random", n, data.dims(), data.rows(), 0, 0, "distance_criterion"};
        const std::string tag = "/n=" + std::to_string(n);
        repeat(s, "algo" + tag, o, [&](std::size_t, std::uint64_t seed) {
            const auto results = iteration_sweep_select(data, selection_config(s, n, max_it, seed));
            for (std::size_t k = 0; k < max_it; ++k) {
                algo[k].value.values.push_back(
                    distance_criterion(data.select_rows(results[k].original_indices()), &scaler, s.workers));
                add_timings(algo[k], results[k]);
            }
        });
        repeat(s, "random" + tag, o, [&](std::size_t, std::uint64_t seed) {
            random.value.values.push_back(
                distance_criterion(data.select_rows(random_sample(data.rows(), n, seed)), &scaler, s.workers));
        });
        std::vector<CellRow> strata;
        for (std::size_t k : s.cluster_sweep) {
            CellRow row{"stratified/k=" + std::to_string(k), n, data.dims(), data.rows(), 0, 0, "distance_criterion"};
            repeat(s, "stratified" + tag + "/k=" + std::to_string(k), o, [&](std::size_t, std::uint64_t seed) {
                Stopwatch sw;
                const auto model = kmeans(data, k, seed, 100, s.workers);
                row.step1_s.values.push_back(sw.seconds());
                row.value.values.push_back(distance_criterion(
                    data.select_rows(stratified_sample(model, n, rng::derive(seed, 1))), &scaler, s.workers));
            });
            strata.push_back(std::move(row));
        }
        CellRow strat;
        for (const auto& r : strata) {
            if (!r.value.values.empty() && (strat.value.values.empty() || r.value.mean() > strat.value.mean())) strat = r;
        }
        strat.method = "stratified";
        const double ref = algo[0].value.mean();
        for (auto& r : algo) r.reference = ref;
        random.reference = strat.reference = ref;
        for (auto& r : strata) r.reference = ref;
        for (auto& r : algo) o.rows.push_back(std::move(r));
        o.rows.push_back(std::move(random));
        for (auto& r : strata) o.rows.push_back(std::move(r));
        if (!strat.value.values.empty()) o.rows.push_back(std::move(strat));
    }
}

inline void scaling(const ExperimentSpec& s, ExperimentOutput& o) {
    const std::size_t n = s.sizes.front();
    double ref = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t rows : s.row_sweep) {
        const Dataset data = make_data(s, "mixture", rows);
        CellRow row{"predictor", n, data.dims(), rows, std::min(s.working_size, rows), 1, "step2a_s"};
        repeat(s, "scaling/N=" + std::to_string(rows), o, [&](std::size_t, std::uint64_t seed) {
            auto cfg = selection_config(s, std::min(n, rows), 1, seed);
            cfg.working_size = std::min(s.working_size, rows);
            const auto r = predictor_select(data, cfg);
            add_timings(row, r);
            row.value.values.push_back(r.iterations.back().step2a_s);
        });
        if (!std::isfinite(ref)) ref = row.value.mean();
        row.reference = ref;  // normalized column is the time ratio to the smallest N
        o.rows.push_back(std::move(row));
    }

    // Worker sweeps: strong scaling at the largest N, weak scaling with
    // N / W held at the smallest N. The method column carries the label.
    const std::size_t strong_rows = s.row_sweep.back(), weak_rows = s.row_sweep.front();
    for (const char* mode : {"strong", "weak"}) {
        double base = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t w : s.worker_sweep) {
            const bool strong = mode[0] == 's';
            const std::size_t rows = strong ? strong_rows : weak_rows * w;
            const Dataset data = make_data(s, "mixture", rows);
            CellRow row{std::string("predictor/") + mode + "/W=" + std::to_string(w), n, data.dims(), rows,
                        std::min(s.working_size, rows), 1, "step2a_s"};
            repeat(s, std::string("scaling/") + mode + "/W=" + std::to_string(w), o,
                   [&](std::size_t, std::uint64_t seed) {
                       auto cfg = selection_config(s, std::min(n, rows), 1, seed);
                       cfg.working_size = std::min(s.working_size, rows);
                       cfg.workers = w;
                       const auto r = predictor_select(data, cfg);
                       add_timings(row, r);
                       row.value.values.push_back(r.iterations.back().step2a_s);
                   });
            if (!std::isfinite(base)) base = row.value.mean();
            row.reference = base;
            o.rows.push_back(std::move(row));
        }
    }
}

inline void nll(const ExperimentSpec& s, ExperimentOutput& o) {
    const Dataset data = make_data(s, "gaussian2d", s.rows);
    const std::size_t n = s.sizes.front();
    std::vector<CellRow> rows(s.iterations);
    for (std::size_t k = 0; k < s.iterations; ++k) {
        rows[k] = CellRow{"predictor-corrector", n, data.dims(), data.rows(), s.working_size, k + 1, "final_nll"};
    }
    const std::string path = path_in(s, "nll_history.csv");
    auto out = open_out(path);
    out << "rep,iteration,step,nll\n";
    repeat(s, "nll", o, [&](std::size_t rep, std::uint64_t seed) {
        const auto r = predictor_corrector_select(data, selection_config(s, n, s.iterations, seed));
        for (const auto& d : r.iterations) {
            rows[d.iteration - 1].value.values.push_back(d.final_nll);
            for (std::size_t t = 0; t < d.nll_history.size(); ++t) {
                out << rep << ',' << d.iteration << ',' << t << ',' << io::format_double(d.nll_history[t]) << '\n';
            }
        }
    });
    o.files.push_back(path);
    for (auto& r : rows) {
        r.reference = rows.front().value.mean();
        o.rows.push_back(std::move(r));
    }
}

inline void conditional_error(const ExperimentSpec& s, ExperimentOutput& o) {
    const auto spec = std::get<GaussianSpec>(named_generator("gaussian2d", s.rows));
    const Dataset data = generate(spec, rng::derive(s.seed, rng::tag("data")));
    const auto log_pdf = gaussian_log_pdf(spec);
    const std::size_t n = s.sizes.front();
    std::vector<CellRow> rows(s.iterations);
    for (std::size_t k = 0; k < s.iterations; ++k) {
        rows[k] = CellRow{"predictor-corrector", n, 2, s.rows, s.working_size, k + 1, "upper_decile_rel_err"};
    }
    repeat(s, "conditional-error", o, [&](std::size_t rep, std::uint64_t seed) {
        const auto cfg = selection_config(s, n, s.iterations, seed);
        std::vector<double> exact;
        iteration_sweep_select(data, cfg, [&](std::size_t it, const AcceptanceProfile& p, const Dataset& shuffled) {
            if (p.target != static_cast<double>(n)) return;
            if (exact.empty()) exact = exact_pdf_acceptance(log_pdf, shuffled, p.target, s.workers).probabilities();
            const auto curve = conditional_error_curve(exact, p.probabilities());
            rows[it - 1].value.values.push_back(curve.upper_bins_rel_err(0.1));
            const std::string path =
                path_in(s, "cond_err_rep" + std::to_string(rep) + "_it" + std::to_string(it) + ".csv");
            auto out = open_out(path);
            write_curve_csv(out, curve);
            o.files.push_back(path);
        });
    });
    for (auto& r : rows) {
        r.reference = rows.front().value.mean();
        o.rows.push_back(std::move(r));
    }
}

// Criterion over working-set size and iteration count, normalized by the
// first iteration at the smallest M.
inline void sensitivity(const ExperimentSpec& s, ExperimentOutput& o) {
    const Dataset data = make_data(s, "mixture", s.rows);
    const ScalingTransform scaler = fit_rescaler(data);
    const std::size_t n = s.sizes.front();
    double ref = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t M : s.working_sweep) {
        if (M > data.rows()) continue;
        std::vector<CellRow> rows(s.iterations);
        for (std::size_t k = 0; k < s.iterations; ++k) {
            rows[k] = CellRow{"predictor-corrector", n, data.dims(), data.rows(), M, k + 1, "distance_criterion"};
        }
        repeat(s, "sensitivity/M=" + std::to_string(M), o, [&](std::size_t, std::uint64_t seed) {
            auto cfg = selection_config(s, n, s.iterations, seed);
            cfg.working_size = M;
            const auto results = iteration_sweep_select(data, cfg);
            for (std::size_t k = 0; k < results.size(); ++k) {
                rows[k].value.values.push_back(
                    distance_criterion(data.select_rows(results[k].original_indices()), &scaler, s.workers));
                add_timings(rows[k], results[k]);
            }
        });
        if (!std::isfinite(ref)) ref = rows.front().value.mean();
        for (auto& r : rows) {
            r.reference = ref;
            o.rows.push_back(std::move(r));
        }
    }
}

inline void scatter(const ExperimentSpec& s, ExperimentOutput& o) {
    const Dataset data = make_data(s, "mixture", s.rows);
    const std::size_t n = s.sizes.front();
    const std::uint64_t seed = cell_seed(s.seed, "scatter", 0);
    auto dump = [&](const std::string& method, const std::vector<std::size_t>& idx) {
        const std::string path = path_in(s, "scatter_" + method + ".csv");
        auto out = open_out(path);
        write_csv(out, data.select_rows(idx));
        o.files.push_back(path);
    };
    try {
        const auto results = iteration_sweep_select(data, selection_config(s, n, s.iterations, seed));
        for (std::size_t k = 0; k < results.size(); ++k) dump("algo_it" + std::to_string(k + 1), results[k].original_indices());
        dump("random", random_sample(data.rows(), n, seed));
        dump("stratified", stratified_sample(kmeans(data, s.clusters, seed, 100, s.workers), n, seed));
    } catch (const std::exception& e) {
        o.failures.push_back({"scatter", 0, e.what()});
    }
}

}  // namespace bench

/// Run one experiment, writing <name>.csv, its extra files and a failure
/// manifest into spec.out_dir. Cell failures are recorded, not thrown.
inline ExperimentOutput run_experiment(const ExperimentSpec& spec) {
    validate(spec);
    std::filesystem::create_directories(spec.out_dir);
    ExperimentOutput o;
    const std::string& e = spec.name;
    try {
        if (e == "fig2") bench::fig2(spec, o);
        else if (e == "table1-ordering") bench::ordering(spec, o);
        else if (e == "scaling") bench::scaling(spec, o);
        else if (e == "nll") bench::nll(spec, o);
        else if (e == "conditional-error") bench::conditional_error(spec, o);
        else if (e == "sensitivity") bench::sensitivity(spec, o);
        else bench::scatter(spec, o);
    } catch (const std::exception& ex) {
        o.failures.push_back({e, 0, ex.what()});
    }
    bench::write_rows(spec, o);
    bench::write_failures(spec, o);
    return o;
}

}  // namespace phasefold

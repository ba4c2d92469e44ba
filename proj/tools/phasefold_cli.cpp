#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "phasefold/phasefold.hpp"

using namespace phasefold;

namespace {

struct InputOpts {
    std::string input;
    std::string generator;
    std::size_t rows = 1000000;
    std::uint64_t data_seed = 0;

    void add(CLI::App* app) {
        auto* in = app->add_option("--input,-i", input, "Dataset file (.csv or binary)");
        auto* gen = app->add_option("--generate", generator,
                                    "Synthetic dataset instead of a file: normal1d, gaussian2d, narrow2d, mixture, "
                                    "mixture<D>d, sinusoid");
        in->excludes(gen);
        app->add_option("--rows", rows, "Rows to generate")->check(CLI::PositiveNumber);
        app->add_option("--data-seed", data_seed, "Seed for the generator");
    }

    Dataset load() const {
        if (!input.empty()) return load_dataset(input);
        if (!generator.empty()) {
            Dataset d = generate(named_generator(generator, rows), data_seed);
            return Dataset(d.rows(), d.dims(), {d.values().begin(), d.values().end()}, d.column_names(),
                           "generated:" + generator);
        }
        throw CLI::RequiredError("--input or --generate");
    }
};

struct EstimatorOpts {
    std::string kind = "flow";
    std::size_t bins = 100;
    std::size_t steps = 12000;
    std::size_t batch = 1024;
    double lr = 1e-3;
    std::size_t layers = 4;
    std::uint64_t budget = kDefaultMemoryBudget;

    void add(CLI::App* app) {
        app->add_option("--estimator", kind, "flow or hist")->check(CLI::IsMember({"flow", "hist", "histogram"}));
        app->add_option("--bins", bins, "Histogram bins per dimension")->check(CLI::PositiveNumber);
        app->add_option("--steps", steps, "Flow training steps")->check(CLI::PositiveNumber);
        app->add_option("--batch", batch, "Flow minibatch size")->check(CLI::PositiveNumber);
        app->add_option("--lr", lr, "Flow learning rate")->check(CLI::PositiveNumber);
        app->add_option("--layers", layers, "Flow coupling layers")->check(CLI::PositiveNumber);
        app->add_option("--memory-budget", budget, "Histogram memory cap in bytes");
    }

    EstimatorConfig config() const {
        EstimatorConfig c;
        c.kind = parse_estimator(kind);
        c.bins = bins;
        c.memory_budget = budget;
        c.train.steps = steps;
        c.train.batch = batch;
        c.train.learning_rate = lr;
        c.train.layers = layers;
        return c;
    }
};

std::size_t resolve_workers(std::size_t flag) { return flag == 0 ? default_workers() : flag; }

void write_selection(const Dataset& data, const std::vector<std::size_t>& idx, const std::string& out,
                     const std::string& points_out) {
    if (!out.empty()) {
        save_indices(idx, out);
    } else {
        write_indices(std::cout, idx);
    }
    if (!points_out.empty()) save_dataset(data.select_rows(idx), points_out);
}

// Flat "key = value" file; each key becomes --key unless already given on
// the command line, so flags override the file.
std::vector<std::string> with_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
    auto trim = [](std::string t) {
        const auto b = t.find_first_not_of(" \t\r"), e = t.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
    };
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::MalformedHeader, path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string flag = "--" + trim(line.substr(0, eq));
        bool given = false;
        for (const auto& a : args) given = given || a == flag || a.rfind(flag + "=", 0) == 0;
        if (given) continue;
        args.push_back(flag);
        std::istringstream values(trim(line.substr(eq + 1)));
        for (std::string v; values >> v;) args.push_back(v);
    }
    return args;
}

int run(int argc, char** argv) {
    CLI::App app{"Instance selection for large datasets by density-equalizing acceptance"};
    app.add_option("--config", "Flat key = value file of option defaults (flags override it)");
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    // generate
    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
    std::string gen_name, gen_out;
    std::size_t gen_rows = 1000000;
    std::uint64_t gen_seed = 0;
    gen->add_option("name", gen_name, "Generator name")->required();
    gen->add_option("--rows", gen_rows, "Rows")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "Seed");
    gen->add_option("--out,-o", gen_out, "Output file (.csv or binary)")->required();

    // fit
    auto* fit = app.add_subcommand("fit", "Train a density estimator on a random working subset");
    InputOpts fit_in;
    EstimatorOpts fit_est;
    std::size_t fit_m = 100000;
    std::uint64_t fit_seed = 0;
    std::string fit_out;
    fit_in.add(fit);
    fit_est.add(fit);
    fit->add_option("--m", fit_m, "Working subset size")->check(CLI::PositiveNumber);
    fit->add_option("--seed", fit_seed, "Seed");
    fit->add_option("--out,-o", fit_out, "Model checkpoint path")->required();

    // sample
    auto* sample = app.add_subcommand("sample", "Select n rows with near-uniform coverage");
    InputOpts s_in;
    EstimatorOpts s_est;
    SelectionConfig s_cfg;
    std::string s_out, s_points, s_report, s_carry = "calibrated", s_calib = "closed-form";
    s_in.add(sample);
    s_est.add(sample);
    sample->add_option("--n", s_cfg.n, "Rows to select")->required()->check(CLI::PositiveNumber);
    sample->add_option("--m", s_cfg.working_size, "Working subset size M")->check(CLI::PositiveNumber);
    sample->add_option("--iters", s_cfg.iterations, "Predictor-corrector iterations")->check(CLI::PositiveNumber);
    sample->add_option("--nprime", s_cfg.calibration_size, "Rows used to calibrate (0 = min(N, 1e5))");
    sample->add_option("--seed", s_cfg.seed, "Seed");
    sample->add_option("--workers", s_cfg.workers, "Worker threads (0 = PHASEFOLD_WORKERS or all cores)");
    sample->add_option("--carry", s_carry, "Score carried between iterations")
        ->check(CLI::IsMember({"raw", "calibrated"}));
    sample->add_option("--calibration", s_calib, "closed-form or bisection")
        ->check(CLI::IsMember({"closed-form", "bisection"}));
    sample->add_option("--out,-o", s_out, "Selected indices (default: stdout)");
    sample->add_option("--points", s_points, "Also write the selected rows");
    sample->add_option("--report", s_report, "JSON run report");

    // metric
    auto* metric = app.add_subcommand("metric", "Distance criterion of one or more selections");
    InputOpts m_in;
    std::vector<std::string> m_indices;
    std::string m_nn_out, m_rescale = "parent";
    std::size_t m_workers = 0;
    m_in.add(metric);
    metric->add_option("--indices", m_indices, "Index file(s); several give a mean ± std line");
    metric->add_option("--rescale", m_rescale, "Fit the [-4,4] rescaling on: parent, subset or none")
        ->check(CLI::IsMember({"parent", "subset", "none"}));
    metric->add_option("--nn-out", m_nn_out, "CSV of nearest-neighbour distances (first selection)");
    metric->add_option("--workers", m_workers, "Worker threads");

    // baseline
    auto* base = app.add_subcommand("baseline", "Reference samplers");
    InputOpts b_in;
    std::string b_method, b_out, b_points;
    std::size_t b_n = 0, b_k = 40, b_iters = 10000, b_bins = 100, b_workers = 0;
    std::uint64_t b_seed = 0, b_budget = kDefaultMemoryBudget;
    b_in.add(base);
    base->add_option("method", b_method, "random, stratified, brute-force or full-binning")
        ->required()
        ->check(CLI::IsMember({"random", "stratified", "brute-force", "full-binning"}));
    base->add_option("--n", b_n, "Rows to select")->required()->check(CLI::PositiveNumber);
    base->add_option("--k", b_k, "Clusters for stratified sampling")->check(CLI::PositiveNumber);
    base->add_option("--iterations", b_iters, "Draws for brute force")->check(CLI::PositiveNumber);
    base->add_option("--bins", b_bins, "Bins per dimension for full binning")->check(CLI::PositiveNumber);
    base->add_option("--memory-budget", b_budget, "Histogram memory cap in bytes");
    base->add_option("--seed", b_seed, "Seed");
    base->add_option("--workers", b_workers, "Worker threads");
    base->add_option("--out,-o", b_out, "Selected indices (default: stdout)");
    base->add_option("--points", b_points, "Also write the selected rows");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Run a named experiment");
    ExperimentSpec spec;
    EstimatorOpts e_est;
    std::string e_carry = "calibrated";
    bench_cmd->add_option("experiment", spec.name, "Experiment")->required()->check(CLI::IsMember(experiment_names()));
    bench_cmd->add_option("--out-dir", spec.out_dir, "Output directory");
    bench_cmd->add_option("--seed", spec.seed, "Master seed");
    bench_cmd->add_option("--reps", spec.repetitions, "Repetitions per cell")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--dataset", spec.dataset, "Generator name override");
    bench_cmd->add_option("--rows", spec.rows, "N")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--n", spec.sizes, "Sample size(s)");
    bench_cmd->add_option("--m", spec.working_size, "Working subset size M")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--iters", spec.iterations, "Iterations")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--clusters", spec.clusters, "k for the scatter export")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--k-sweep", spec.cluster_sweep, "k values tried for stratified sampling");
    bench_cmd->add_option("--w-sweep", spec.worker_sweep, "Worker counts for strong and weak scaling");
    bench_cmd->add_option("--row-sweep", spec.row_sweep, "N values for the scaling experiment");
    bench_cmd->add_option("--m-sweep", spec.working_sweep, "M values for the sensitivity experiment");
    bench_cmd->add_option("--workers", spec.workers, "Worker threads");
    bench_cmd->add_option("--carry", e_carry, "Score carried between iterations")
        ->check(CLI::IsMember({"raw", "calibrated"}));
    e_est.add(bench_cmd);

    try {
        auto args = with_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (gen->parsed()) {
        save_dataset(generate(named_generator(gen_name, gen_rows), gen_seed), gen_out);
        return 0;
    }

    if (fit->parsed()) {
        const Dataset data = fit_in.load();
        const Dataset working = random_subset(data, std::min(fit_m, data.rows()), fit_seed);
        EstimatorFit f = fit_estimator(working, fit_est.config(), fit_seed);
        save_model(f.model, fit_out);
        std::cout << "final_nll " << io::format_double(f.final_nll) << '\n';
        return 0;
    }

    if (sample->parsed()) {
        const Dataset data = s_in.load();
        s_cfg.estimator = s_est.config();
        s_cfg.carry = parse_carry(s_carry);
        s_cfg.calibration = s_calib == "bisection" ? CalibrationMethod::Bisection : CalibrationMethod::ClosedForm;
        s_cfg.workers = resolve_workers(s_cfg.workers);
        Stopwatch sw;
        const SelectionResult r = predictor_corrector_select(data, s_cfg);
        const auto idx = r.original_indices();
        write_selection(data, idx, s_out, s_points);
        if (!s_report.empty()) {
            RunReport rep = make_report(s_cfg, r, data, s_cfg.iterations == 1 ? "predictor" : "predictor-corrector");
            rep.wall_s = sw.seconds();
            if (idx.size() >= 2) {
                const ScalingTransform scaler = fit_rescaler(data);
                rep.metrics["distance_criterion"] = distance_criterion(data.select_rows(idx), &scaler, s_cfg.workers);
                rep.rescale_fit = "parent";
            }
            save_report(rep, s_report);
        }
        return 0;
    }

    if (metric->parsed()) {
        const Dataset data = m_in.load();
        if (m_indices.empty()) throw CLI::RequiredError("--indices");
        const std::size_t workers = resolve_workers(m_workers);
        std::optional<ScalingTransform> parent;
        if (m_rescale == "parent") parent = fit_rescaler(data);
        Ensemble values;
        for (std::size_t k = 0; k < m_indices.size(); ++k) {
            const Dataset pts = data.select_rows(load_indices(m_indices[k]));
            std::optional<ScalingTransform> own;
            if (m_rescale == "subset") own = fit_rescaler(pts);
            const ScalingTransform* scaler = parent ? &*parent : own ? &*own : nullptr;
            values.values.push_back(distance_criterion(pts, scaler, workers));
            if (k == 0 && !m_nn_out.empty()) {
                const Dataset view = scaler ? apply_rescaler(*scaler, pts) : pts;
                const auto nn = nearest_neighbors(view, workers);
                std::ofstream out(m_nn_out);
                if (!out) throw Error(ErrorCode::Io, "cannot open " + m_nn_out + " for writing");
                out << "row,neighbor,distance\n";
                for (std::size_t i = 0; i < nn.size(); ++i) {
                    out << i << ',' << nn[i].index << ',' << io::format_double(nn[i].distance) << '\n';
                }
            }
        }
        if (values.values.size() == 1) {
            std::cout << io::format_double(values.values.front()) << '\n';
        } else {
            for (double v : values.values) std::cout << io::format_double(v) << '\n';
            std::cout << "mean ± std: " << values.summary() << '\n';
        }
        return 0;
    }

    if (base->parsed()) {
        const Dataset data = b_in.load();
        const std::size_t workers = resolve_workers(b_workers);
        std::vector<std::size_t> idx;
        if (b_method == "random") {
            idx = random_sample(data.rows(), b_n, b_seed);
        } else if (b_method == "stratified") {
            idx = stratified_sample(kmeans(data, b_k, b_seed, 100, workers), b_n, rng::derive(b_seed, 1));
        } else if (b_method == "brute-force") {
            const ScalingTransform scaler = fit_rescaler(data);
            auto r = brute_force_max_criterion(data, b_n, b_iters, b_seed, &scaler);
            std::cerr << "best criterion " << io::format_double(r.best) << " at draw " << r.best_iteration << '\n';
            idx = std::move(r.indices);
        } else {
            idx = full_binning_select(data, b_n, b_bins, b_seed, b_budget, workers).original_indices();
        }
        write_selection(data, idx, b_out, b_points);
        return 0;
    }

    spec.estimator = e_est.config();
    spec.carry = parse_carry(e_carry);
    spec.workers = resolve_workers(spec.workers);
    const ExperimentOutput out = run_experiment(spec);
    for (const auto& f : out.files) std::cout << f << '\n';
    for (const auto& f : out.failures) std::cerr << "failed " << f.cell << " rep " << f.repetition << ": " << f.error << '\n';
    return out.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "phasefold/dataset.hpp"
#include "phasefold/density/model.hpp"
#include "phasefold/parallel.hpp"

namespace phasefold {

/// Densities are floored here before taking reciprocals, so every score is
/// finite. Histograms apply their own, much larger, floor first.
inline constexpr double kLogDensityFloor = -690.0;

/// log s_i = -log max(p(x_i), floor) for every row, evaluated partition by
/// partition (Step 2a).
inline std::vector<double> parallel_log_scores(const DensityModel& model, const Dataset& data,
                                               const PartitionPlan& plan) {
    if (model.dims() != data.dims()) throw Error(ErrorCode::InvalidArgument, "model and data differ in D");
    if (plan.rows != data.rows()) throw Error(ErrorCode::InvalidArgument, "plan does not cover the dataset");
    std::vector<double> out(data.rows());
    const std::size_t D = data.dims();
    parallel_for(plan, [&](std::size_t, RowRange r) {
        std::span<double> slice(out.data() + r.begin, r.size());
        model.log_density_batch(data.values().subspan(r.begin * D, r.size() * D), r.size(), slice);
        for (double& v : slice) v = -std::max(v, kLogDensityFloor);
    });
    return out;
}

/// Raw acceptance scores 1 / max(p, floor).
inline std::vector<double> raw_acceptance(const DensityModel& model, const Dataset& points) {
    auto log_scores = parallel_log_scores(model, points, PartitionPlan(points.rows(), 1));
    for (double& v : log_scores) v = std::exp(v);
    return log_scores;
}

/// Scale factor alpha in log space. `saturated` means alpha = +inf: every
/// calibrated probability is 1 (the target is not below the population).
struct Calibration {
    double log_alpha = 0.0;
    bool saturated = false;

    double alpha() const noexcept { return saturated ? std::numeric_limits<double>::infinity() : std::exp(log_alpha); }
};

inline double calibrated_probability(double log_score, const Calibration& cal) noexcept {
    if (cal.saturated) return 1.0;
    const double v = cal.log_alpha + log_score;
    return v >= 0.0 ? 1.0 : std::exp(v);
}

namespace detail {

inline double log_add(double a, double b) noexcept {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline void check_calibration_args(std::span<const double> log_scores, std::size_t population, double target) {
    if (log_scores.empty()) throw Error(ErrorCode::InvalidArgument, "calibration needs at least one score");
    if (population < log_scores.size()) throw Error(ErrorCode::InvalidArgument, "calibration subset larger than N");
    if (!(target > 0.0)) throw Error(ErrorCode::InvalidArgument, "calibration target must be positive");
    for (double v : log_scores) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite score");
    }
}

}  // namespace detail

/// Solve (N/N') sum_i min(alpha s_i, 1) = c exactly. The left side is
/// piecewise linear in alpha; with the scores sorted in decreasing order and
/// the first k clipped, alpha = (c N'/N - k) / sum_{i>=k} s_i.
inline Calibration calibrate_alpha(std::span<const double> log_scores, std::size_t population, double target) {
    detail::check_calibration_args(log_scores, population, target);
    const std::size_t n = log_scores.size();
    const double t = target * static_cast<double>(n) / static_cast<double>(population);
    if (t >= static_cast<double>(n)) return Calibration{0.0, true};
    std::vector<double> ls(log_scores.begin(), log_scores.end());
    std::sort(ls.begin(), ls.end(), std::greater<>());
    std::vector<double> suffix(n + 1, -std::numeric_limits<double>::infinity());
    for (std::size_t k = n; k-- > 0;) suffix[k] = detail::log_add(ls[k], suffix[k + 1]);
    for (std::size_t k = 0; k < n && static_cast<double>(k) < t; ++k) {
        const double la = std::log(t - static_cast<double>(k)) - suffix[k];
        if (la + ls[k] <= 0.0) return Calibration{la, false};
    }
    // Unreachable for finite scores: k = n - 1 always satisfies the check.
    return Calibration{-ls.back(), false};
}

inline Calibration calibrate_alpha_raw(std::span<const double> scores, std::size_t population, double target) {
    std::vector<double> ls(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!(scores[i] > 0.0)) throw Error(ErrorCode::InvalidArgument, "scores must be positive");
        ls[i] = std::log(scores[i]);
    }
    return calibrate_alpha(ls, population, target);
}

/// Expected selected count (N/N') sum min(alpha s_i, 1), reduced in fixed
/// partition order.
inline double expected_count(std::span<const double> log_scores, std::size_t population, const Calibration& cal,
                             const PartitionPlan& plan) {
    const double sum = parallel_reduce(plan, [&](std::size_t i) { return calibrated_probability(log_scores[i], cal); });
    return sum * static_cast<double>(population) / static_cast<double>(log_scores.size());
}

/// Same root by bisection on log alpha; an independent route to the closed
/// form above.
inline Calibration calibrate_alpha_bisect(std::span<const double> log_scores, std::size_t population, double target,
                                          const PartitionPlan& plan, double tol = 1e-9) {
    detail::check_calibration_args(log_scores, population, target);
    const std::size_t n = log_scores.size();
    const double t = target * static_cast<double>(n) / static_cast<double>(population);
    if (t >= static_cast<double>(n)) return Calibration{0.0, true};
    double total = -std::numeric_limits<double>::infinity();
    double min_ls = log_scores[0];
    for (double v : log_scores) {
        total = detail::log_add(total, v);
        min_ls = std::min(min_ls, v);
    }
    double lo = std::log(t) - total;  // unclipped sum equals target: count <= target
    double hi = -min_ls;              // everything clipped: count = N >= target
    for (int it = 0; it < 400 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        const double g = expected_count(log_scores, population, Calibration{mid, false}, plan);
        if (std::abs(g - target) <= tol) return Calibration{mid, false};
        (g < target ? lo : hi) = mid;
    }
    return Calibration{0.5 * (lo + hi), false};
}

enum class CalibrationMethod { ClosedForm, Bisection };

/// Reciprocal-density scores with their calibration against a target count.
struct AcceptanceProfile {
    std::vector<double> log_scores;
    Calibration calibration;
    double target = 0.0;
    double clipped_fraction = 0.0;

    double probability(std::size_t i) const noexcept { return calibrated_probability(log_scores[i], calibration); }
    std::vector<double> probabilities() const {
        std::vector<double> out(log_scores.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = probability(i);
        return out;
    }
};

/// Calibrate on the first `subset` scores (the data is already shuffled) and
/// report the clipped share over all of them.
inline AcceptanceProfile build_profile(std::vector<double> log_scores, double target, std::size_t subset,
                                       const PartitionPlan& plan,
                                       CalibrationMethod method = CalibrationMethod::ClosedForm) {
    const std::size_t N = log_scores.size();
    subset = std::clamp<std::size_t>(subset, 1, N);
    std::span<const double> head(log_scores.data(), subset);
    AcceptanceProfile p;
    p.target = target;
    if (method == CalibrationMethod::ClosedForm) {
        p.calibration = calibrate_alpha(head, N, target);
    } else {
        p.calibration = calibrate_alpha_bisect(head, N, target, PartitionPlan(subset, plan.workers, plan.chunk));
    }
    p.log_scores = std::move(log_scores);
    const double clipped = parallel_reduce(plan, [&](std::size_t i) { return p.probability(i) >= 1.0 ? 1.0 : 0.0; });
    p.clipped_fraction = clipped / static_cast<double>(N);
    return p;
}

/// Calibrated acceptance from a known density (reference path).
template <class LogPdf>
AcceptanceProfile exact_pdf_acceptance(LogPdf&& log_pdf, const Dataset& data, double target,
                                       std::size_t workers = 1) {
    PartitionPlan plan(data.rows(), workers);
    std::vector<double> ls(data.rows());
    parallel_map(plan, ls, [&](std::size_t i) { return -std::max(log_pdf(data.row(i)), kLogDensityFloor); });
    return build_profile(std::move(ls), target, data.rows(), plan);
}

inline constexpr std::uint64_t kSelectTag = rng::tag("select");

struct PassOutcome {
    std::vector<std::size_t> indices;  // ascending
    std::size_t passes = 0;
    std::size_t topped_up = 0;
};

/// Accept row i on pass p when uniform(seed, i, p) < prob_i, scanning in row
/// order and stopping at n. Short passes are followed by further passes over
/// unselected rows; any remaining shortfall is filled with the
/// highest-probability unselected rows (lower index first on ties).
inline PassOutcome select_pass(std::span<const double> probs, std::size_t n, std::uint64_t seed,
                               std::size_t max_passes = 100, std::size_t workers = 1,
                               std::size_t chunk = PartitionPlan::kDefaultChunk) {
    const std::size_t N = probs.size();
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "selection needs n >= 1");
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "probabilities must lie in [0, 1]");
    }
    n = std::min(n, N);
    PartitionPlan plan(N, workers, chunk);
    std::vector<std::uint8_t> chosen(N, 0), accept(N, 0);
    PassOutcome out;
    std::size_t count = 0;
    for (std::size_t pass = 0; pass < std::max<std::size_t>(max_passes, 1) && count < n; ++pass) {
        ++out.passes;
        parallel_for(plan, [&](std::size_t, RowRange r) {
            for (std::size_t i = r.begin; i < r.end; ++i) {
                accept[i] = !chosen[i] && rng::uniform(seed, kSelectTag, i, pass) < probs[i];
            }
        });
        for (std::size_t i = 0; i < N && count < n; ++i) {
            if (accept[i]) {
                chosen[i] = 1;
                ++count;
            }
        }
    }
    if (count < n) {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < N; ++i) {
            if (!chosen[i]) rest.push_back(i);
        }
        std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
        for (std::size_t k = 0; k < rest.size() && count < n; ++k) {
            chosen[rest[k]] = 1;
            ++count;
            ++out.topped_up;
        }
    }
    for (std::size_t i = 0; i < N; ++i) {
        if (chosen[i]) out.indices.push_back(i);
    }
    return out;
}

/// What an intermediate iteration passes on to the next one's product:
/// the raw reciprocal-density scores, or the calibrated (clipped)
/// probabilities of the intermediate selection.
enum class ScoreCarry { Raw, Calibrated };

inline const char* to_string(ScoreCarry c) { return c == ScoreCarry::Raw ? "raw" : "calibrated"; }

inline ScoreCarry parse_carry(const std::string& s) {
    if (s == "raw") return ScoreCarry::Raw;
    if (s == "calibrated") return ScoreCarry::Calibrated;
    throw Error(ErrorCode::InvalidArgument, "unknown score carry '" + s + "' (expected raw or calibrated)");
}

struct SelectionConfig {
    std::size_t n = 1000;
    std::size_t working_size = 100000;       // M
    std::size_t iterations = 1;              // nFlowIter
    std::size_t calibration_size = 0;        // N'; 0 means min(N, 1e5)
    EstimatorConfig estimator;
    std::uint64_t seed = 0;
    std::size_t max_passes = 100;
    std::size_t workers = 1;
    std::size_t chunk = PartitionPlan::kDefaultChunk;
    CalibrationMethod calibration = CalibrationMethod::ClosedForm;
    ScoreCarry carry = ScoreCarry::Calibrated;
    bool keep_probabilities = false;

    std::size_t resolved_calibration_size(std::size_t N) const {
        return calibration_size == 0 ? std::min<std::size_t>(N, 100000) : std::min(calibration_size, N);
    }
};

struct IterationDiagnostics {
    std::size_t iteration = 0;
    std::size_t target = 0;
    double log_alpha = 0.0;
    bool saturated = false;
    double clipped_fraction = 0.0;
    double calibration_sum = 0.0;  // sum of calibrated probabilities over all N rows
    std::vector<double> nll_history;
    double final_nll = 0.0;
    std::size_t selected = 0;
    std::size_t passes = 0;
    std::size_t topped_up = 0;
    double step1_s = 0.0;
    double step2a_s = 0.0;
    double step2b_s = 0.0;
};

struct SelectionResult {
    std::vector<std::size_t> indices;  // into the shuffled dataset, ascending
    Permutation permutation;
    std::size_t realized = 0;
    std::vector<IterationDiagnostics> iterations;
    std::vector<double> probabilities;  // final calibrated probabilities (shuffled order), if requested

    /// Selected rows as indices into the caller's dataset, ascending.
    std::vector<std::size_t> original_indices() const {
        std::vector<std::size_t> out;
        out.reserve(indices.size());
        for (std::size_t i : indices) out.push_back(permutation.order[i]);
        std::sort(out.begin(), out.end());
        return out;
    }
};

/// Hook run after every calibration (profile.target tells intermediate from
/// final); the experiment harness uses it to capture acceptance profiles.
using IterationObserver = std::function<void(std::size_t iteration, const AcceptanceProfile& profile,
                                             const Dataset& shuffled)>;

inline void validate(const SelectionConfig& cfg, std::size_t N) {
    if (cfg.n < 1 || cfg.n > N) throw Error(ErrorCode::InvalidArgument, "need 1 <= n <= N");
    if (cfg.working_size < 1 || cfg.working_size > N) throw Error(ErrorCode::InvalidArgument, "need 1 <= M <= N");
    if (cfg.iterations < 1) throw Error(ErrorCode::InvalidArgument, "need at least one iteration");
}

namespace detail {

/// Shared driver. With `every` set, each iteration also performs the final
/// n-selection on the scores so far, yielding the result a run with that
/// many iterations would produce.
inline std::vector<SelectionResult> run_iterations(const Dataset& data, const SelectionConfig& cfg, bool every,
                                                   const IterationObserver& observe) {
    const std::size_t N = data.rows();
    validate(cfg, N);
    auto [shuffled, perm] = shuffle(data, cfg.seed);
    const PartitionPlan plan(N, cfg.workers, cfg.chunk);
    const std::size_t n_prime = cfg.resolved_calibration_size(N);

    Dataset working = random_subset(shuffled, cfg.working_size, rng::derive(cfg.seed, rng::tag("working")));
    std::vector<double> cumulative;
    std::vector<IterationDiagnostics> history;
    std::vector<SelectionResult> results;

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        const bool last = it == cfg.iterations;
        IterationDiagnostics diag;
        diag.iteration = it;

        Stopwatch sw;
        EstimatorFit fit = fit_estimator(working, cfg.estimator, rng::derive(cfg.seed, rng::tag("fit"), it));
        diag.step1_s = sw.seconds();
        diag.nll_history = std::move(fit.nll_history);
        diag.final_nll = fit.final_nll;

        sw.reset();
        std::vector<double> scores = parallel_log_scores(fit.model, shuffled, plan);
        diag.step2a_s = sw.seconds();

        sw.reset();
        if (cumulative.empty()) {
            cumulative = std::move(scores);
        } else {
            for (std::size_t i = 0; i < N; ++i) cumulative[i] += scores[i];
        }
        const double combine_s = sw.seconds();
        const std::uint64_t draw_seed = rng::derive(cfg.seed, kSelectTag, it);

        auto select = [&](std::size_t target, IterationDiagnostics& d) {
            sw.reset();
            d.target = target;
            AcceptanceProfile profile =
                build_profile(cumulative, static_cast<double>(target), n_prime, plan, cfg.calibration);
            std::vector<double> probs = profile.probabilities();
            PassOutcome pass = select_pass(probs, target, draw_seed, cfg.max_passes, cfg.workers, cfg.chunk);
            d.step2b_s = combine_s + sw.seconds();
            d.log_alpha = profile.calibration.log_alpha;
            d.saturated = profile.calibration.saturated;
            d.clipped_fraction = profile.clipped_fraction;
            d.calibration_sum = parallel_reduce_sum(probs, plan);
            d.selected = pass.indices.size();
            d.passes = pass.passes;
            d.topped_up = pass.topped_up;
            if (observe) observe(it, profile, shuffled);
            return std::pair{std::move(pass), std::move(probs)};
        };

        if (every || last) {
            IterationDiagnostics final_diag = diag;
            auto [pass, probs] = select(cfg.n, final_diag);
            SelectionResult r;
            r.permutation = perm;
            r.indices = std::move(pass.indices);
            r.realized = r.indices.size();
            if (cfg.keep_probabilities) r.probabilities = std::move(probs);
            r.iterations = history;
            r.iterations.push_back(std::move(final_diag));
            results.push_back(std::move(r));
        }
        if (!last) {
            auto [pass, probs] = select(cfg.working_size, diag);
            working = shuffled.select_rows(pass.indices);
            if (cfg.carry == ScoreCarry::Calibrated) {
                // log min(alpha s_i, 1), kept in log space so tiny values survive.
                for (double& v : cumulative) v = diag.saturated ? 0.0 : std::min(v + diag.log_alpha, 0.0);
            }
            history.push_back(std::move(diag));
        }
    }
    return results;
}

}  // namespace detail

/// Iterative selection. Each iteration fits the estimator on the current
/// working set, scores every row, and multiplies the scores into the running
/// product (sums in log space). Intermediate iterations select M rows that
/// become the next working set; the last selects n. One iteration is the
/// plain predictor.
inline SelectionResult predictor_corrector_select(const Dataset& data, const SelectionConfig& cfg,
                                                  const IterationObserver& observe = {}) {
    return std::move(detail::run_iterations(data, cfg, false, observe).back());
}

/// Results for every iteration count 1..cfg.iterations from one run; entry k
/// equals predictor_corrector_select with k + 1 iterations.
inline std::vector<SelectionResult> iteration_sweep_select(const Dataset& data, const SelectionConfig& cfg,
                                                           const IterationObserver& observe = {}) {
    return detail::run_iterations(data, cfg, true, observe);
}

/// Single-iteration selection: shuffle, fit on M rows, score all N,
/// calibrate on the first N', select n.
inline SelectionResult predictor_select(const Dataset& data, SelectionConfig cfg) {
    cfg.iterations = 1;
    return predictor_corrector_select(data, cfg);
}

}  // namespace phasefold

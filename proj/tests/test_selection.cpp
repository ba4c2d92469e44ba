#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "phasefold/generators.hpp"
#include "phasefold/selection.hpp"

using namespace phasefold;

namespace {

// 900 rows at density 0.9 and 100 at 0.1.
std::vector<double> two_event_scores() {
    std::vector<double> ls(1000);
    for (std::size_t i = 0; i < 1000; ++i) ls[i] = -std::log(i < 900 ? 0.9 : 0.1);
    return ls;
}

SelectionConfig hist_config(std::size_t n, std::size_t M, std::size_t iters, std::uint64_t seed) {
    SelectionConfig c;
    c.n = n;
    c.working_size = M;
    c.iterations = iters;
    c.seed = seed;
    c.estimator.kind = EstimatorKind::Histogram;
    c.estimator.bins = 20;
    return c;
}

}  // namespace

TEST(Calibration, TwoEventsUnclipped) {
    const auto ls = two_event_scores();
    const Calibration c = calibrate_alpha(ls, 1000, 100);
    ASSERT_FALSE(c.saturated);
    EXPECT_NEAR(c.alpha(), 0.05, 1e-12);
    EXPECT_NEAR(calibrated_probability(ls[0], c), 1.0 / 18.0, 1e-12);
    EXPECT_NEAR(calibrated_probability(ls[999], c), 0.5, 1e-12);
    double sum = 0.0;
    for (double v : ls) sum += calibrated_probability(v, c);
    EXPECT_NEAR(sum, 100.0, 1e-9);
}

TEST(Calibration, TwoEventsClipped) {
    const auto ls = two_event_scores();
    const Calibration c = calibrate_alpha(ls, 1000, 250);
    EXPECT_NEAR(c.alpha(), 0.15, 1e-12);
    EXPECT_NEAR(calibrated_probability(ls[0], c), 1.0 / 6.0, 1e-12);
    EXPECT_EQ(calibrated_probability(ls[999], c), 1.0);
}

TEST(Calibration, BisectionAgreesWithClosedForm) {
    const auto ls = two_event_scores();
    const PartitionPlan plan(ls.size(), 1);
    for (double target : {10.0, 100.0, 250.0, 999.0}) {
        const Calibration a = calibrate_alpha(ls, 1000, target);
        const Calibration b = calibrate_alpha_bisect(ls, 1000, target, plan);
        EXPECT_NEAR(expected_count(ls, 1000, b, plan), target, 1e-6) << target;
        EXPECT_NEAR(a.log_alpha, b.log_alpha, 1e-8) << target;
    }
}

TEST(Calibration, RandomScoresHitTarget) {
    rng::Stream s(4, 5);
    std::vector<double> ls(5000);
    for (double& v : ls) v = 5.0 * s.normal();
    const PartitionPlan plan(ls.size(), 1);
    for (double target : {1.0, 50.0, 2000.0, 4990.0}) {
        const Calibration c = calibrate_alpha(ls, 5000, target);
        EXPECT_NEAR(expected_count(ls, 5000, c, plan), target, 1e-8 * target) << target;
    }
}

TEST(Calibration, SubsetScalesToPopulation) {
    // 100 subset rows stand for 10000: target 500 means 5 per subset.
    std::vector<double> ls(100, 0.0);
    const Calibration c = calibrate_alpha(ls, 10000, 500);
    EXPECT_NEAR(c.alpha(), 0.05, 1e-12);
}

TEST(Calibration, SaturatesWhenTargetCoversPopulation) {
    const auto ls = two_event_scores();
    EXPECT_TRUE(calibrate_alpha(ls, 1000, 1000).saturated);
    EXPECT_EQ(calibrated_probability(-500.0, calibrate_alpha(ls, 1000, 1000)), 1.0);
}

TEST(Calibration, HugeScoreRangeStaysFinite) {
    std::vector<double> ls{690.0, -690.0, 0.0, 300.0};
    const Calibration c = calibrate_alpha(ls, 4, 2);
    EXPECT_TRUE(std::isfinite(c.log_alpha));
    double sum = 0.0;
    for (double v : ls) sum += calibrated_probability(v, c);
    EXPECT_NEAR(sum, 2.0, 1e-12);
}

TEST(Calibration, RejectsBadArguments) {
    const std::vector<double> ls{0.0, 1.0};
    EXPECT_THROW(calibrate_alpha(ls, 2, 0.0), Error);
    EXPECT_THROW(calibrate_alpha(std::vector<double>{}, 2, 1.0), Error);
    EXPECT_THROW(calibrate_alpha_raw(std::vector<double>{1.0, -1.0}, 2, 1.0), Error);
}

TEST(Calibration, RawMatchesLog) {
    const std::vector<double> raw{1.0, 2.0, 8.0, 0.5};
    std::vector<double> ls;
    for (double r : raw) ls.push_back(std::log(r));
    EXPECT_DOUBLE_EQ(calibrate_alpha_raw(raw, 4, 2).log_alpha, calibrate_alpha(ls, 4, 2).log_alpha);
}

TEST(SelectPass, ExactCountAndDeterminism) {
    std::vector<double> probs(10000);
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = 0.02 + 0.1 * (i % 7) / 7.0;
    const auto a = select_pass(probs, 300, 9);
    const auto b = select_pass(probs, 300, 9);
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_EQ(a.indices.size(), 300u);
    EXPECT_TRUE(std::is_sorted(a.indices.begin(), a.indices.end()));
    EXPECT_EQ(std::set<std::size_t>(a.indices.begin(), a.indices.end()).size(), 300u);
    EXPECT_EQ(a.passes, 1u);
}

TEST(SelectPass, ExtraPassesThenTopUp) {
    std::vector<double> probs(100, 0.0);
    probs[3] = 0.5;
    probs[7] = 0.25;
    const auto r = select_pass(probs, 5, 1, 3);
    EXPECT_EQ(r.indices.size(), 5u);
    EXPECT_EQ(r.passes, 3u);
    EXPECT_GE(r.topped_up, 3u);
    // top-up takes the two positive rows first, then the lowest indices
    EXPECT_TRUE(std::find(r.indices.begin(), r.indices.end(), 3) != r.indices.end());
    EXPECT_TRUE(std::find(r.indices.begin(), r.indices.end(), 7) != r.indices.end());
}

TEST(SelectPass, AllOnesTakesPrefix) {
    std::vector<double> probs(50, 1.0);
    const auto r = select_pass(probs, 10, 2);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(r.indices[i], i);
}

TEST(SelectPass, WorkerCountDoesNotMatter) {
    std::vector<double> probs(200000);
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = rng::uniform(1, 2, i) * 0.01;
    const auto a = select_pass(probs, 1000, 5, 100, 1, 4096);
    const auto b = select_pass(probs, 1000, 5, 100, 4, 4096);
    EXPECT_EQ(a.indices, b.indices);
}

TEST(SelectPass, RejectsInvalidProbabilities) {
    EXPECT_THROW(select_pass(std::vector<double>{0.5, 1.5}, 1, 0), Error);
    EXPECT_THROW(select_pass(std::vector<double>{0.5, NAN}, 1, 0), Error);
    EXPECT_THROW(select_pass(std::vector<double>{0.5}, 0, 0), Error);
}

TEST(ExactPdf, UniformCoverageOnStandardNormal) {
    const auto spec = std::get<GaussianSpec>(named_generator("normal1d", 100000));
    const Dataset data = generate(spec, 3);
    const auto prof = exact_pdf_acceptance(gaussian_log_pdf(spec), data, 1000);
    const auto probs = prof.probabilities();
    const auto pass = select_pass(probs, 1000, 4);
    // Selected density is flat over the unclipped core: counts in [-1, 0) and [0, 1) agree.
    int left = 0, right = 0;
    for (auto i : pass.indices) {
        const double x = data(i, 0);
        if (x >= -1 && x < 0) ++left;
        if (x >= 0 && x < 1) ++right;
    }
    EXPECT_NEAR(left, right, 4.0 * std::sqrt(left + right));
    double sum = 0.0;
    for (double p : probs) sum += p;
    EXPECT_NEAR(sum, 1000.0, 1e-6);
}

TEST(Predictor, SelectsExactlyNWithHistogram) {
    const Dataset data = generate(named_generator("mixture", 20000), 1);
    const auto r = predictor_select(data, hist_config(200, 5000, 1, 3));
    EXPECT_EQ(r.realized, 200u);
    EXPECT_EQ(r.indices.size(), 200u);
    EXPECT_TRUE(r.permutation.is_bijection());
    const auto orig = r.original_indices();
    EXPECT_EQ(std::set<std::size_t>(orig.begin(), orig.end()).size(), 200u);
    ASSERT_EQ(r.iterations.size(), 1u);
    EXPECT_EQ(r.iterations[0].target, 200u);
    EXPECT_NEAR(r.iterations[0].calibration_sum, 200.0, 5.0);
}

TEST(Predictor, SameSeedSameResult) {
    const Dataset data = generate(named_generator("mixture", 10000), 1);
    const auto a = predictor_corrector_select(data, hist_config(100, 2000, 2, 5));
    const auto b = predictor_corrector_select(data, hist_config(100, 2000, 2, 5));
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_NE(a.indices, predictor_corrector_select(data, hist_config(100, 2000, 2, 6)).indices);
}

TEST(Predictor, FullSizeSaturates) {
    const Dataset data = generate(named_generator("gaussian2d", 500), 1);
    const auto r = predictor_select(data, hist_config(500, 500, 1, 1));
    EXPECT_EQ(r.realized, 500u);
    EXPECT_TRUE(r.iterations[0].saturated);
    EXPECT_EQ(r.iterations[0].clipped_fraction, 1.0);
}

TEST(Predictor, ValidatesConfig) {
    const Dataset data = generate(named_generator("gaussian2d", 100), 1);
    EXPECT_THROW(predictor_select(data, hist_config(0, 50, 1, 1)), Error);
    EXPECT_THROW(predictor_select(data, hist_config(101, 50, 1, 1)), Error);
    EXPECT_THROW(predictor_select(data, hist_config(10, 101, 1, 1)), Error);
    EXPECT_THROW(predictor_corrector_select(data, hist_config(10, 50, 0, 1)), Error);
}

TEST(PredictorCorrector, IntermediateIterationsTargetM) {
    const Dataset data = generate(named_generator("mixture", 20000), 2);
    const auto r = predictor_corrector_select(data, hist_config(100, 3000, 3, 4));
    ASSERT_EQ(r.iterations.size(), 3u);
    EXPECT_EQ(r.iterations[0].target, 3000u);
    EXPECT_EQ(r.iterations[1].target, 3000u);
    EXPECT_EQ(r.iterations[2].target, 100u);
    EXPECT_EQ(r.iterations[0].selected, 3000u);
    EXPECT_EQ(r.realized, 100u);
}

TEST(PredictorCorrector, SweepMatchesSeparateRuns) {
    const Dataset data = generate(named_generator("mixture", 10000), 3);
    for (ScoreCarry carry : {ScoreCarry::Raw, ScoreCarry::Calibrated}) {
        auto cfg = hist_config(150, 2000, 3, 8);
        cfg.carry = carry;
        const auto sweep = iteration_sweep_select(data, cfg);
        ASSERT_EQ(sweep.size(), 3u);
        for (std::size_t k = 0; k < 3; ++k) {
            auto single = cfg;
            single.iterations = k + 1;
            const auto r = predictor_corrector_select(data, single);
            EXPECT_EQ(sweep[k].indices, r.indices) << "iterations " << k + 1;
            EXPECT_EQ(sweep[k].iterations.size(), k + 1);
            EXPECT_EQ(sweep[k].iterations.back().log_alpha, r.iterations.back().log_alpha);
        }
    }
}

TEST(PredictorCorrector, BisectionSelectsTheSameRows) {
    const Dataset data = generate(named_generator("mixture", 10000), 3);
    auto cfg = hist_config(150, 2000, 2, 8);
    const auto a = predictor_corrector_select(data, cfg);
    cfg.calibration = CalibrationMethod::Bisection;
    const auto b = predictor_corrector_select(data, cfg);
    EXPECT_NEAR(a.iterations.back().log_alpha, b.iterations.back().log_alpha, 1e-6);
}

TEST(PredictorCorrector, ObserverSeesEveryCalibration) {
    const Dataset data = generate(named_generator("mixture", 5000), 3);
    std::vector<double> targets;
    predictor_corrector_select(data, hist_config(50, 1000, 3, 1),
                               [&](std::size_t, const AcceptanceProfile& p, const Dataset& shuffled) {
                                   targets.push_back(p.target);
                                   EXPECT_EQ(p.log_scores.size(), shuffled.rows());
                               });
    EXPECT_EQ(targets, (std::vector<double>{1000, 1000, 50}));
}

TEST(ScoreCarry, ParseAndName) {
    EXPECT_EQ(parse_carry("raw"), ScoreCarry::Raw);
    EXPECT_EQ(parse_carry("calibrated"), ScoreCarry::Calibrated);
    EXPECT_STREQ(to_string(ScoreCarry::Raw), "raw");
    EXPECT_THROW(parse_carry("x"), Error);
}

TEST(Profile, InvariantToDensityScaleAndMonotone) {
    rng::Stream s(8, 1);
    std::vector<double> ls(3000);
    for (double& v : ls) v = 2.0 * s.normal();
    const PartitionPlan plan(ls.size(), 1);
    const auto a = build_profile(ls, 200, ls.size(), plan).probabilities();
    auto shifted = ls;
    for (double& v : shifted) v -= std::log(37.0);  // density times 37
    const auto b = build_profile(shifted, 200, ls.size(), plan).probabilities();
    for (std::size_t i = 0; i < ls.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    for (std::size_t i = 1; i < ls.size(); ++i) {
        if (ls[i] > ls[i - 1]) EXPECT_GE(a[i], a[i - 1]);
        if (ls[i] < ls[i - 1]) EXPECT_LE(a[i], a[i - 1]);
    }
}

TEST(Predictor, SelectedRowsComeFromTheInput) {
    const Dataset data = generate(named_generator("mixture", 5000), 4);
    const auto r = predictor_corrector_select(data, hist_config(60, 1000, 2, 2));
    const Dataset picked = data.select_rows(r.original_indices());
    for (std::size_t i = 0; i < picked.rows(); ++i) {
        bool found = false;
        for (std::size_t j = 0; j < data.rows() && !found; ++j) {
            found = picked(i, 0) == data(j, 0) && picked(i, 1) == data(j, 1);
        }
        EXPECT_TRUE(found);
    }
}

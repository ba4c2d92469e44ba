#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "phasefold/density/model.hpp"
#include "phasefold/generators.hpp"

using namespace phasefold;

namespace {

FlowDensity random_flow(std::size_t dims, TransformKind kind, std::uint64_t seed) {
    FlowArchitecture a;
    a.dims = dims;
    a.transform = kind;
    FlowDensity f(a, std::vector<double>(dims, 0.3), std::vector<double>(dims, 1.7));
    f.randomize(seed, 0.8);
    return f;
}

}  // namespace

TEST(Spline, ForwardInverseAndDerivative) {
    std::vector<double> raw(spline::param_count(8));
    rng::Stream s(3, 4);
    for (double& r : raw) r = 2.0 * s.uniform() - 1.0;
    spline::Knots kn;
    kn.decode(raw, 8, 3.0);
    for (double x = -4.0; x <= 4.0; x += 0.037) {
        const auto f = spline::forward(kn, x);
        const auto b = spline::inverse(kn, f.y);
        EXPECT_NEAR(b.y, x, 1e-10);
        EXPECT_NEAR(b.logdet, -f.logdet, 1e-9);
        const double h = 1e-6;
        const double fd = (spline::forward(kn, x + h).y - spline::forward(kn, x - h).y) / (2 * h);
        if (std::abs(std::abs(x) - 3.0) > 1e-3) EXPECT_NEAR(std::log(fd), f.logdet, 1e-6);
    }
    // identity tails
    EXPECT_EQ(spline::forward(kn, 3.5).y, 3.5);
    EXPECT_EQ(spline::forward(kn, -3.5).logdet, 0.0);
}

TEST(Flow, ZeroOutputLayersStartAsStandardizedGaussian) {
    FlowArchitecture a;
    a.dims = 2;
    FlowDensity f(a, {1.0, -1.0}, {2.0, 0.5});
    f.initialize(1);
    const double x[2] = {2.0, 0.0};
    // standardized z = (0.5, 2)
    const double expect = -0.5 * (0.25 + 4.0) - std::log(2 * std::numbers::pi) - std::log(2.0 * 0.5);
    EXPECT_NEAR(f.log_density(x), expect, 1e-10);
}

class FlowKinds : public ::testing::TestWithParam<TransformKind> {};

TEST_P(FlowKinds, GradientMatchesCentralDifferences) {
    const Dataset data = generate(named_generator("gaussian2d", 64), 3);
    FlowDensity f = random_flow(2, GetParam(), 5);
    std::vector<double> g(f.parameters().size());
    f.nll_and_grad(data.values(), 64, g);
    double worst = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double h = 1e-5, o = f.parameters()[k];
        f.parameters()[k] = o + h;
        const double lp = f.nll_and_grad(data.values(), 64, {});
        f.parameters()[k] = o - h;
        const double lm = f.nll_and_grad(data.values(), 64, {});
        f.parameters()[k] = o;
        const double fd = (lp - lm) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-6}));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST_P(FlowKinds, LogDetMatchesJacobianDeterminant) {
    const FlowDensity f = random_flow(2, GetParam(), 7);
    const Dataset pts = generate(named_generator("gaussian2d", 100), 9);
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        const auto ev = f.inverse_and_logdet(pts.row(i));
        const double h = 1e-6;
        double J[2][2];
        for (std::size_t c = 0; c < 2; ++c) {
            double xp[2] = {pts(i, 0), pts(i, 1)}, xm[2] = {pts(i, 0), pts(i, 1)};
            xp[c] += h;
            xm[c] -= h;
            const auto zp = f.inverse_and_logdet(xp).z, zm = f.inverse_and_logdet(xm).z;
            for (std::size_t r = 0; r < 2; ++r) J[r][c] = (zp[r] - zm[r]) / (2 * h);
        }
        const double det = std::log(std::abs(J[0][0] * J[1][1] - J[0][1] * J[1][0]));
        EXPECT_LT(std::abs(det - ev.logdet) / std::max(1.0, std::abs(det)), 1e-4) << "row " << i;
    }
}

TEST_P(FlowKinds, InverseOfForwardIsIdentity) {
    const FlowDensity f = random_flow(3, GetParam(), 11);
    const Dataset pts = generate(named_generator("mixture3d", 200), 2);
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        const auto z = f.inverse_and_logdet(pts.row(i)).z;
        const auto x = f.forward(z);
        for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(x[d], pts(i, d), 1e-8);
    }
}

TEST_P(FlowKinds, BatchMatchesSingleEvaluation) {
    const FlowDensity f = random_flow(2, GetParam(), 13);
    const Dataset pts = generate(named_generator("gaussian2d", 300), 4);
    std::vector<double> out(pts.rows());
    f.log_density_batch(pts.values(), pts.rows(), out);
    for (std::size_t i = 0; i < pts.rows(); ++i) EXPECT_NEAR(out[i], f.log_density(pts.row(i)), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Transforms, FlowKinds, ::testing::Values(TransformKind::Spline, TransformKind::Affine));

TEST(Flow, TrainingIsDeterministicAndLowersNll) {
    const Dataset data = generate(named_generator("mixture", 5000), 1);
    TrainConfig tc;
    tc.steps = 300;
    tc.batch = 128;
    tc.seed = 3;
    const FlowFit a = fit_flow(data, tc);
    const FlowFit b = fit_flow(data, tc);
    EXPECT_EQ(a.nll_history, b.nll_history);
    EXPECT_EQ(a.nll_history.size(), 300u);
    double early = 0.0;
    for (std::size_t i = 0; i < 10; ++i) early += a.nll_history[i] / 10;
    EXPECT_LT(a.final_nll, early - 0.1);
}

TEST(Flow, BatchIsCappedAtWorkingSize) {
    const Dataset data = generate(named_generator("gaussian2d", 20), 1);
    TrainConfig tc;
    tc.steps = 5;
    tc.batch = 1024;
    EXPECT_NO_THROW(fit_flow(data, tc));
}

TEST(Flow, CheckpointRoundTrip) {
    const FlowDensity f = random_flow(2, TransformKind::Spline, 3);
    std::stringstream ss;
    checkpoint::write(ss, f);
    const DensityModel m = checkpoint::read(ss);
    ASSERT_NE(m.flow(), nullptr);
    const double x[2] = {0.4, -1.1};
    EXPECT_EQ(m.log_density(x), f.log_density(x));
}

TEST(Histogram, DensityIntegratesToOne) {
    const Dataset data = generate(named_generator("gaussian2d", 20000), 5);
    const HistogramDensity h = fit_histogram(data, 30);
    double total = 0.0;
    for (double m : h.masses()) total += m;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(h.bins_per_dim(), 30u);
    const double outside[2] = {100.0, 100.0};
    EXPECT_NEAR(h.log_density(outside), std::log(h.floor_mass()) - std::log(h.bin_volume()), 1e-9);
}

TEST(Histogram, TwoPointExample) {
    const Dataset data(4, 1, {0.0, 0.1, 0.2, 1.0});
    const HistogramDensity h = fit_histogram(data, 2);
    // bins [0, .5) holds 3/4 and [.5, 1] holds 1/4, width .5
    const double a = 0.05, b = 0.9;
    EXPECT_NEAR(std::exp(h.log_density({&a, 1})), 1.5, 1e-12);
    EXPECT_NEAR(std::exp(h.log_density({&b, 1})), 0.5, 1e-12);
}

TEST(Histogram, MemoryBudget) {
    const Dataset data = generate(named_generator("mixture5d", 1000), 1);
    try {
        fit_histogram(data, 100, std::uint64_t{4} << 30);
        FAIL() << "expected OutOfMemoryBudget";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::OutOfMemoryBudget);
    }
    EXPECT_EQ(histogram_bytes(100, 5), std::uint64_t{80000000000});
}

TEST(Histogram, ConstantDimensionDoesNotBreakDensity) {
    const Dataset data(3, 2, {0.0, 2.0, 0.5, 2.0, 1.0, 2.0});
    const HistogramDensity h = fit_histogram(data, 4);
    const double x[2] = {0.5, 2.0};
    EXPECT_TRUE(std::isfinite(h.log_density(x)));
}

TEST(Estimator, HistogramNllIsMeanNegativeLogDensity) {
    const Dataset data = generate(named_generator("gaussian2d", 2000), 2);
    EstimatorConfig cfg;
    cfg.kind = EstimatorKind::Histogram;
    cfg.bins = 10;
    const EstimatorFit fit = fit_estimator(data, cfg, 0);
    double nll = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) nll -= fit.model.log_density(data.row(i));
    EXPECT_NEAR(fit.final_nll, nll / data.rows(), 1e-12);
    EXPECT_EQ(fit.nll_history.size(), 1u);
}

TEST(Estimator, ParseNames) {
    EXPECT_EQ(parse_estimator("flow"), EstimatorKind::Flow);
    EXPECT_EQ(parse_estimator("hist"), EstimatorKind::Histogram);
    EXPECT_THROW(parse_estimator("kde"), Error);
}

TEST(Flow, DensityIntegratesToOne) {
    const FlowDensity f = random_flow(2, TransformKind::Spline, 17);
    // midpoint grid over mean +- 6 sd, 1000 x 1000 points
    const std::size_t G = 1000;
    const double lo = 0.3 - 6 * 1.7, w = 12 * 1.7 / G;
    std::vector<double> pts(G * G * 2), lp(G * G);
    for (std::size_t i = 0; i < G; ++i) {
        for (std::size_t j = 0; j < G; ++j) {
            pts[2 * (i * G + j)] = lo + (i + 0.5) * w;
            pts[2 * (i * G + j) + 1] = lo + (j + 0.5) * w;
        }
    }
    f.log_density_batch(pts, G * G, lp);
    double total = 0.0;
    for (double v : lp) total += std::exp(v) * w * w;
    EXPECT_NEAR(total, 1.0, 0.05);
}

TEST(Histogram, PiecewiseConstantWithinABin) {
    const Dataset data = generate(named_generator("gaussian2d", 5000), 5);
    const HistogramDensity h = fit_histogram(data, 10);
    const double a[2] = {1.0, 1.0}, b[2] = {1.0 + 1e-9, 1.0 - 1e-9};
    EXPECT_EQ(h.log_density(a), h.log_density(b));
}

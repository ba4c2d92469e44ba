#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "phasefold/bench.hpp"
#include "phasefold/report.hpp"

using namespace phasefold;

namespace {

std::string temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("phasefold_test_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return {std::istreambuf_iterator<char>(in), {}};
}

ExperimentSpec small_spec(const std::string& name) {
    ExperimentSpec s;
    s.name = name;
    s.seed = 3;
    s.repetitions = 2;
    s.out_dir = temp_dir(name);
    s.rows = 4000;
    s.sizes = {50};
    s.working_size = 1000;
    s.clusters = 5;
    s.cluster_sweep = {3, 5};
    s.worker_sweep = {1, 2};
    s.row_sweep = {2000, 4000};
    s.working_sweep = {500, 1000};
    s.estimator.kind = EstimatorKind::Histogram;
    s.estimator.bins = 15;
    return s;
}

RunReport sample_report() {
    const Dataset data = generate(named_generator("mixture", 3000), 1);
    SelectionConfig cfg;
    cfg.n = 40;
    cfg.working_size = 800;
    cfg.iterations = 2;
    cfg.estimator.kind = EstimatorKind::Histogram;
    const auto r = predictor_corrector_select(data, cfg);
    RunReport rep = make_report(cfg, r, data, "predictor-corrector");
    rep.metrics["distance_criterion"] = 0.25;
    rep.curves["it1"] = conditional_error_curve(std::vector<double>{0.1, 1.0}, std::vector<double>{0.2, 1.0}, 4);
    rep.wall_s = 1.5;
    return rep;
}

}  // namespace

TEST(Report, JsonRoundTrip) {
    const RunReport rep = sample_report();
    const RunReport back = parse_report(dump_report(rep));
    EXPECT_EQ(back, rep);
    EXPECT_EQ(back.version, std::string(kVersion));
    // empty curve bins go out as null and come back as NaN
    EXPECT_TRUE(std::isnan(back.curves.at("it1").rel_err[1]));
    EXPECT_NE(dump_report(rep).find("null"), std::string::npos);
}

TEST(Report, FileRoundTrip) {
    const RunReport rep = sample_report();
    const std::string dir = temp_dir("report");
    std::filesystem::create_directories(dir);
    save_report(rep, dir + "/r.json");
    EXPECT_EQ(load_report(dir + "/r.json"), rep);
    EXPECT_THROW(load_report(dir + "/missing.json"), Error);
}

TEST(Report, FlagsConstantColumns) {
    const Dataset data(4, 2, {0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0});
    SelectionConfig cfg;
    cfg.n = 2;
    cfg.working_size = 4;
    cfg.estimator.kind = EstimatorKind::Histogram;
    const RunReport rep = make_report(cfg, predictor_select(data, cfg), data, "predictor");
    EXPECT_EQ(rep.degenerate_dims, std::vector<std::size_t>{1});
    EXPECT_EQ(parse_report(dump_report(rep)).degenerate_dims, std::vector<std::size_t>{1});
}

TEST(Bench, OrderingReportsEveryClusterCountAndTheBest) {
    const auto spec = small_spec("table1-ordering");
    const auto out = run_experiment(spec);
    double best = -1.0, reported = -2.0;
    for (const auto& r : out.rows) {
        if (r.method.rfind("stratified/k=", 0) == 0) best = std::max(best, r.value.mean());
        if (r.method == "stratified") reported = r.value.mean();
    }
    EXPECT_EQ(best, reported);
}

TEST(Bench, ScalingHasStrongAndWeakRows) {
    const auto out = run_experiment(small_spec("scaling"));
    std::size_t strong = 0, weak = 0;
    for (const auto& r : out.rows) {
        if (r.method.find("/strong/") != std::string::npos) {
            ++strong;
            EXPECT_EQ(r.rows, 4000u);
        }
        if (r.method == "predictor/weak/W=2") {
            ++weak;
            EXPECT_EQ(r.rows, 4000u);
        }
    }
    EXPECT_EQ(strong, 2u);
    EXPECT_EQ(weak, 1u);
}

TEST(Report, RejectsNonFiniteValues) {
    RunReport rep = sample_report();
    rep.metrics["bad"] = std::numeric_limits<double>::infinity();
    try {
        dump_report(rep);
        FAIL() << "expected NonFiniteValue";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFiniteValue);
        EXPECT_NE(std::string(e.what()).find("metrics.bad"), std::string::npos);
    }
}

TEST(Report, MalformedInput) {
    try {
        parse_report("{\"method\": 3}");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MalformedHeader);
    }
    EXPECT_THROW(parse_report("not json"), Error);
}

TEST(Ensemble, MeanAndSampleDeviation) {
    Ensemble e{{1.0, 2.0, 3.0}};
    EXPECT_DOUBLE_EQ(e.mean(), 2.0);
    EXPECT_DOUBLE_EQ(e.stddev(), 1.0);
    EXPECT_EQ(e.summary(2), "2.00 ± 1.00");
    EXPECT_EQ(Ensemble{{4.0}}.stddev(), 0.0);
}

TEST(Bench, CellSeedsAreIndependent) {
    EXPECT_EQ(cell_seed(1, "a", 0), cell_seed(1, "a", 0));
    EXPECT_NE(cell_seed(1, "a", 0), cell_seed(1, "a", 1));
    EXPECT_NE(cell_seed(1, "a", 0), cell_seed(1, "b", 0));
}

TEST(Bench, ValidatesSpec) {
    auto s = small_spec("nll");
    s.name = "bogus";
    EXPECT_THROW(run_experiment(s), Error);
    s = small_spec("nll");
    s.sizes = {5000};
    EXPECT_THROW(run_experiment(s), Error);
}

class BenchExperiments : public ::testing::TestWithParam<std::string> {};

TEST_P(BenchExperiments, WritesSummaryAndManifest) {
    const auto spec = small_spec(GetParam());
    const auto out = run_experiment(spec);
    EXPECT_TRUE(out.failures.empty()) << out.failures.front().error;
    const std::string csv = slurp(spec.out_dir + "/" + spec.name + ".csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "experiment,method,n,D,N,M,iters,metric,reps,mean,std,normalized_mean,step1_s,step2a_s,step2b_s");
    EXPECT_EQ(slurp(spec.out_dir + "/" + spec.name + ".failures.json"), "[]\n");
    for (const auto& f : out.files) EXPECT_TRUE(std::filesystem::exists(f)) << f;
    if (spec.name != "scatter") EXPECT_FALSE(out.rows.empty());
}

INSTANTIATE_TEST_SUITE_P(All, BenchExperiments, ::testing::ValuesIn(experiment_names()),
                         [](const auto& info) {
                             std::string s = info.param;
                             for (char& c : s) {
                                 if (c == '-') c = '_';
                             }
                             return s;
                         });

TEST(Bench, FailingCellsAreRecorded) {
    auto spec = small_spec("table1-ordering");
    spec.estimator.bins = 100;
    spec.dataset = "mixture5d";
    spec.estimator.memory_budget = 1 << 20;
    const auto out = run_experiment(spec);
    ASSERT_FALSE(out.failures.empty());
    EXPECT_NE(out.failures.front().error.find("OutOfMemoryBudget"), std::string::npos);
    EXPECT_NE(slurp(spec.out_dir + "/table1-ordering.failures.json").find("OutOfMemoryBudget"), std::string::npos);
}

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "phasefold/dataset.hpp"
#include "phasefold/generators.hpp"
#include "phasefold/io.hpp"
#include "phasefold/rng.hpp"

using namespace phasefold;

namespace {

Dataset small() { return Dataset(3, 2, {0.0, 1.0, 2.0, 3.0, 4.5, -5.25}, {"a", "b"}); }

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(Rng, CounterBasedAndDeterministic) {
    EXPECT_EQ(rng::hash(1, 2, 3), rng::hash(1, 2, 3));
    EXPECT_NE(rng::hash(1, 2, 3), rng::hash(1, 2, 4));
    EXPECT_NE(rng::derive(7, 0), rng::derive(7, 1));
    rng::Stream a(9, rng::tag("x")), b(9, rng::tag("x"));
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformInUnitInterval) {
    for (std::uint64_t i = 0; i < 10000; ++i) {
        const double u = rng::uniform(3, 4, i);
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Rng, BelowIsRoughlyUniform) {
    rng::Stream s(1, 2);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[s.below(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, NormalMoments) {
    rng::Stream s(5, 6);
    double m = 0, v = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = s.normal();
        m += x;
        v += x * x;
    }
    m /= n;
    v = v / n - m * m;
    EXPECT_NEAR(m, 0.0, 0.01);
    EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(Dataset, RejectsBadShapesAndValues) {
    EXPECT_EQ(code_of([] { Dataset(0, 2, {}); }), ErrorCode::EmptyDataset);
    EXPECT_EQ(code_of([] { Dataset(2, 2, {1, 2, 3}); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { Dataset(1, 2, {1, NAN}); }), ErrorCode::NonFiniteValue);
    EXPECT_EQ(code_of([] { Dataset(1, 1, {INFINITY}); }), ErrorCode::NonFiniteValue);
}

TEST(Dataset, SelectRowsKeepsOrderAndChecksBounds) {
    const Dataset d = small();
    const std::vector<std::size_t> idx{2, 0};
    const Dataset s = d.select_rows(idx);
    EXPECT_EQ(s.rows(), 2u);
    EXPECT_EQ(s(0, 0), 4.5);
    EXPECT_EQ(s(1, 1), 1.0);
    const std::vector<std::size_t> bad{3};
    EXPECT_EQ(code_of([&] { d.select_rows(bad); }), ErrorCode::IndexOutOfRange);
}

TEST(Shuffle, IsASeededBijection) {
    const auto p = make_permutation(1000, 42);
    EXPECT_TRUE(p.is_bijection());
    EXPECT_EQ(p.order, make_permutation(1000, 42).order);
    EXPECT_NE(p.order, make_permutation(1000, 43).order);
}

TEST(Shuffle, PreservesRowMultiset) {
    const Dataset d = generate(named_generator("gaussian2d", 500), 1);
    auto [s, perm] = shuffle(d, 3);
    for (std::size_t i = 0; i < d.rows(); ++i) {
        EXPECT_EQ(s(i, 0), d(perm.order[i], 0));
        EXPECT_EQ(s(i, 1), d(perm.order[i], 1));
    }
}

TEST(Subset, DistinctAndSeeded) {
    const auto idx = random_indices(1000, 300, 11);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 300u);
    EXPECT_EQ(idx, random_indices(1000, 300, 11));
    EXPECT_EQ(code_of([] { random_indices(10, 11, 0); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { random_indices(10, 0, 0); }), ErrorCode::InvalidArgument);
}

TEST(Subset, FullSizeIsPermutation) {
    auto idx = random_indices(50, 50, 2);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(idx[i], i);
}

TEST(Rescaler, MapsRangeOntoMinusFourFour) {
    const Dataset d = generate(named_generator("mixture", 2000), 4);
    const auto t = fit_rescaler(d);
    const Dataset r = apply_rescaler(t, d);
    for (std::size_t k = 0; k < 2; ++k) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < r.rows(); ++i) {
            lo = std::min(lo, r(i, k));
            hi = std::max(hi, r(i, k));
        }
        EXPECT_DOUBLE_EQ(lo, -4.0);
        EXPECT_NEAR(hi, 4.0, 1e-12);
    }
    const Dataset back = invert_rescaler(t, r);
    for (std::size_t i = 0; i < d.rows(); ++i) EXPECT_NEAR(back(i, 1), d(i, 1), 1e-12);
}

TEST(Rescaler, ConstantDimensionIsDegenerate) {
    const Dataset d(3, 2, {1, 5, 2, 5, 3, 5});
    const auto t = fit_rescaler(d);
    EXPECT_EQ(t.degenerate_dims(), std::vector<std::size_t>{1});
    const Dataset r = apply_rescaler(t, d);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r(i, 1), 0.0);
    EXPECT_EQ(t.scale(1), 0.0);
}

TEST(Csv, RoundTripIsExact) {
    const Dataset d = generate(named_generator("sinusoid", 300), 8);
    std::stringstream ss;
    write_csv(ss, d);
    const Dataset back = read_csv(ss);
    EXPECT_EQ(back, d);
    EXPECT_EQ(back.column_names(), d.column_names());
}

TEST(Csv, Errors) {
    auto parse = [](const std::string& text) {
        std::stringstream ss(text);
        return read_csv(ss);
    };
    EXPECT_EQ(code_of([&] { parse(""); }), ErrorCode::MalformedHeader);
    EXPECT_EQ(code_of([&] { parse("a,,b\n1,2,3\n"); }), ErrorCode::MalformedHeader);
    EXPECT_EQ(code_of([&] { parse("a,b\n1,2\n3\n"); }), ErrorCode::RaggedRow);
    EXPECT_EQ(code_of([&] { parse("a,b\n1,x\n"); }), ErrorCode::NonNumericCell);
    EXPECT_EQ(code_of([&] { parse("a,b\n"); }), ErrorCode::EmptyDataset);
    EXPECT_EQ(code_of([&] { parse("a\nnan\n"); }), ErrorCode::NonFiniteValue);
}

TEST(Binary, RoundTripAndErrors) {
    const Dataset d = generate(named_generator("gaussian2d", 100), 2);
    std::stringstream ss;
    write_binary(ss, d);
    const std::string bytes = ss.str();
    std::stringstream in(bytes);
    EXPECT_EQ(read_binary(in), d);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::stringstream a(bad_magic);
    EXPECT_EQ(code_of([&] { read_binary(a); }), ErrorCode::BadMagic);

    std::stringstream b(bytes.substr(0, bytes.size() - 3));
    EXPECT_EQ(code_of([&] { read_binary(b); }), ErrorCode::Truncated);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    std::stringstream c(bad_version);
    EXPECT_EQ(code_of([&] { read_binary(c); }), ErrorCode::UnsupportedVersion);
}

TEST(Indices, RoundTrip) {
    const std::vector<std::size_t> idx{0, 5, 17};
    std::stringstream ss;
    write_indices(ss, idx);
    EXPECT_EQ(read_indices(ss), idx);
    std::stringstream bad("index\n3\nfoo\n");
    EXPECT_EQ(code_of([&] { read_indices(bad); }), ErrorCode::NonNumericCell);
}

TEST(Generators, DeterministicAndShaped) {
    const Dataset a = generate(named_generator("mixture3d", 1000), 1);
    EXPECT_EQ(a.dims(), 3u);
    EXPECT_EQ(a, generate(named_generator("mixture3d", 1000), 1));
    EXPECT_EQ(generate(named_generator("sinusoid", 10), 1).dims(), 3u);
    EXPECT_THROW(named_generator("nope", 10), Error);
}

TEST(Generators, GaussianMoments) {
    const Dataset d = generate(named_generator("gaussian2d", 200000), 3);
    double m0 = 0, m1 = 0, v0 = 0, v1 = 0;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        m0 += d(i, 0);
        m1 += d(i, 1);
    }
    m0 /= d.rows();
    m1 /= d.rows();
    for (std::size_t i = 0; i < d.rows(); ++i) {
        v0 += (d(i, 0) - m0) * (d(i, 0) - m0);
        v1 += (d(i, 1) - m1) * (d(i, 1) - m1);
    }
    EXPECT_NEAR(m0, 1.0, 0.01);
    EXPECT_NEAR(m1, 1.0, 0.01);
    EXPECT_NEAR(v0 / d.rows(), 1.0, 0.02);
    EXPECT_NEAR(v1 / d.rows(), 2.0, 0.04);
}

TEST(Generators, MixtureWeights) {
    auto [d, labels] = generate_mixture_labeled(mixture_surrogate(2, 100000), 5);
    std::vector<double> c(3, 0.0);
    for (auto l : labels) c[l] += 1.0 / labels.size();
    EXPECT_NEAR(c[0], 0.70, 0.01);
    EXPECT_NEAR(c[1], 0.25, 0.01);
    EXPECT_NEAR(c[2], 0.05, 0.005);
}

TEST(Generators, LogPdfsIntegrateToOne) {
    const auto g = gaussian_log_pdf(std::get<GaussianSpec>(named_generator("gaussian2d", 1)));
    const auto m = mixture_log_pdf(mixture_surrogate(2, 1));
    double sg = 0, sm = 0;
    const double h = 0.05;
    for (double x = -12; x < 14; x += h) {
        for (double y = -12; y < 14; y += h) {
            const double p[2] = {x, y};
            sg += std::exp(g(p)) * h * h;
            sm += std::exp(m(p)) * h * h;
        }
    }
    EXPECT_NEAR(sg, 1.0, 1e-6);
    EXPECT_NEAR(sm, 1.0, 1e-6);
}

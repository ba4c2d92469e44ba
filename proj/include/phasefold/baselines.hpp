#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "phasefold/dataset.hpp"
#include "phasefold/metrics.hpp"
#include "phasefold/parallel.hpp"
#include "phasefold/selection.hpp"

namespace phasefold {

/// n rows uniformly without replacement, ascending.
inline std::vector<std::size_t> random_sample(std::size_t rows, std::size_t n, std::uint64_t seed) {
    if (n > rows) throw Error(ErrorCode::InvalidArgument, "cannot sample more rows than the dataset has");
    auto idx = partial_permutation(rows, n, seed, rng::tag("random-sample"));
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct KMeansModel {
    std::size_t k = 0;
    std::size_t dims = 0;
    std::vector<double> centroids;  // k x dims, row-major
    std::vector<std::size_t> assignment;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // after each Lloyd iteration
    std::size_t iterations = 0;
    bool converged = false;

    std::span<const double> centroid(std::size_t c) const { return {centroids.data() + c * dims, dims}; }
    std::vector<std::size_t> cluster_sizes() const {
        std::vector<std::size_t> s(k, 0);
        for (std::size_t a : assignment) ++s[a];
        return s;
    }
};

namespace detail {

struct Assignment {
    std::size_t cluster;
    double d2;
};

inline Assignment closest_centroid(const double* x, const std::vector<double>& centroids, std::size_t k,
                                   std::size_t D) {
    Assignment best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t c = 0; c < k; ++c) {
        const double d2 = squared_distance(x, centroids.data() + c * D, D);
        if (d2 < best.d2) best = {c, d2};
    }
    return best;
}

inline double inertia_of(const Dataset& data, const std::vector<double>& centroids,
                         const std::vector<std::size_t>& assignment, const PartitionPlan& plan) {
    const std::size_t D = data.dims();
    const double* v = data.values().data();
    return parallel_reduce(plan, [&](std::size_t i) {
        return squared_distance(v + i * D, centroids.data() + assignment[i] * D, D);
    });
}

/// k-means++ seeding: first centre uniform, then proportional to the squared
/// distance to the nearest chosen centre.
inline std::vector<double> kmeanspp(const Dataset& data, std::size_t k, std::uint64_t seed) {
    const std::size_t N = data.rows(), D = data.dims();
    const double* v = data.values().data();
    rng::Stream stream(seed, rng::tag("kmeans++"));
    std::vector<double> centroids;
    centroids.reserve(k * D);
    std::vector<double> d2(N, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(stream.below(N));
    for (std::size_t c = 0; c < k; ++c) {
        centroids.insert(centroids.end(), v + pick * D, v + (pick + 1) * D);
        if (c + 1 == k) break;
        double total = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            d2[i] = std::min(d2[i], squared_distance(v + i * D, v + pick * D, D));
            total += d2[i];
        }
        if (total > 0.0) {
            const double target = stream.uniform() * total;
            double acc = 0.0;
            pick = N;
            for (std::size_t i = 0; i < N; ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick == N) {  // rounding at the end of the scan
                for (std::size_t i = N; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            pick = static_cast<std::size_t>(stream.below(N));  // only duplicates left
        }
    }
    return centroids;
}

}  // namespace detail

/// Lloyd's algorithm from a k-means++ start. Stops at an assignment fixpoint
/// or after max_iters. A cluster that empties is reseeded with the point
/// farthest from its own centroid.
inline KMeansModel kmeans(const Dataset& data, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100,
                          std::size_t workers = 1) {
    const std::size_t N = data.rows(), D = data.dims();
    if (k < 1 || k > N) throw Error(ErrorCode::InvalidArgument, "need 1 <= k <= N");
    const PartitionPlan plan(N, workers);
    const double* v = data.values().data();
    KMeansModel m;
    m.k = k;
    m.dims = D;
    m.centroids = detail::kmeanspp(data, k, seed);
    m.assignment.assign(N, k);  // k marks "unassigned" so the first pass counts as a change
    std::vector<double> d2(N);
    std::vector<std::uint8_t> changed_flag(plan.partitions());

    for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
        std::fill(changed_flag.begin(), changed_flag.end(), 0);
        parallel_for(plan, [&](std::size_t p, RowRange r) {
            for (std::size_t i = r.begin; i < r.end; ++i) {
                const auto a = detail::closest_centroid(v + i * D, m.centroids, k, D);
                if (a.cluster != m.assignment[i]) changed_flag[p] = 1;
                m.assignment[i] = a.cluster;
                d2[i] = a.d2;
            }
        });
        const bool changed = std::any_of(changed_flag.begin(), changed_flag.end(), [](auto f) { return f != 0; });
        if (!changed) {
            m.converged = true;
            break;
        }
        ++m.iterations;

        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t a : m.assignment) ++sizes[a];
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            std::size_t far = N;
            for (std::size_t i = 0; i < N; ++i) {
                if (sizes[m.assignment[i]] > 1 && (far == N || d2[i] > d2[far])) far = i;
            }
            if (far == N) continue;  // unreachable while k <= N
            --sizes[m.assignment[far]];
            m.assignment[far] = c;
            d2[far] = 0.0;
            sizes[c] = 1;
            std::copy(v + far * D, v + (far + 1) * D, m.centroids.begin() + static_cast<std::ptrdiff_t>(c * D));
        }

        // Centroid sums per partition, combined in partition order.
        std::vector<std::vector<double>> partial(plan.partitions(), std::vector<double>(k * D, 0.0));
        parallel_for(plan, [&](std::size_t p, RowRange r) {
            auto& acc = partial[p];
            for (std::size_t i = r.begin; i < r.end; ++i) {
                double* dst = acc.data() + m.assignment[i] * D;
                for (std::size_t d = 0; d < D; ++d) dst[d] += v[i * D + d];
            }
        });
        std::vector<double> sums(k * D, 0.0);
        for (const auto& acc : partial) {
            for (std::size_t j = 0; j < k * D; ++j) sums[j] += acc[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t d = 0; d < D; ++d) {
                m.centroids[c * D + d] = sums[c * D + d] / static_cast<double>(sizes[c]);
            }
        }
        m.inertia_history.push_back(detail::inertia_of(data, m.centroids, m.assignment, plan));
    }
    m.inertia = detail::inertia_of(data, m.centroids, m.assignment, plan);
    return m;
}

/// Per-cluster draw counts: floor(n/k) each, the remainder to the largest
/// clusters, and any shortfall from small clusters handed round-robin to
/// clusters that still have members left.
inline std::vector<std::size_t> stratified_allocation(const std::vector<std::size_t>& sizes, std::size_t n) {
    const std::size_t k = sizes.size();
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "no strata");
    if (n > total) throw Error(ErrorCode::InvalidArgument, "cannot sample more rows than the dataset has");
    std::vector<std::size_t> quota(k, n / k);
    std::vector<std::size_t> by_size(k);
    std::iota(by_size.begin(), by_size.end(), std::size_t{0});
    std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
    for (std::size_t r = 0; r < n % k; ++r) ++quota[by_size[r]];
    std::size_t deficit = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (quota[c] > sizes[c]) {
            deficit += quota[c] - sizes[c];
            quota[c] = sizes[c];
        }
    }
    while (deficit > 0) {
        for (std::size_t c = 0; c < k && deficit > 0; ++c) {
            if (quota[c] < sizes[c]) {
                ++quota[c];
                --deficit;
            }
        }
    }
    return quota;
}

/// Equal-allocation stratified sample over k-means clusters; uniform within
/// each cluster. Ascending indices.
inline std::vector<std::size_t> stratified_sample(const KMeansModel& model, std::size_t n, std::uint64_t seed) {
    const auto sizes = model.cluster_sizes();
    const auto quota = stratified_allocation(sizes, n);
    std::vector<std::vector<std::size_t>> members(model.k);
    for (std::size_t i = 0; i < model.assignment.size(); ++i) members[model.assignment[i]].push_back(i);
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t c = 0; c < model.k; ++c) {
        const auto pick = partial_permutation(members[c].size(), quota[c], rng::derive(seed, rng::tag("stratum"), c),
                                              rng::tag("stratum"));
        for (std::size_t j = 0; j < quota[c]; ++j) out.push_back(members[c][pick[j]]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct BruteForceResult {
    std::vector<std::size_t> indices;
    double best = 0.0;
    std::size_t best_iteration = 0;
};

/// Best distance criterion among `iterations` random draws of n rows. Draw t
/// uses a seed derived from (seed, t), so a longer run extends a shorter one.
inline BruteForceResult brute_force_max_criterion(const Dataset& data, std::size_t n, std::size_t iterations,
                                                  std::uint64_t seed, const ScalingTransform* scaler = nullptr) {
    if (iterations < 1) throw Error(ErrorCode::InvalidArgument, "need at least one iteration");
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "distance criterion needs at least two points");
    const Dataset view = scaler ? apply_rescaler(*scaler, data) : data;
    BruteForceResult r;
    r.best = -1.0;
    for (std::size_t t = 0; t < iterations; ++t) {
        auto idx = random_sample(data.rows(), n, rng::derive(seed, rng::tag("brute-force"), t));
        const double crit = distance_criterion(view.select_rows(idx));
        if (crit > r.best) {
            r.best = crit;
            r.indices = std::move(idx);
            r.best_iteration = t;
        }
    }
    return r;
}

/// Histogram on all N rows (no working subset, no iteration), then the usual
/// calibration and selection.
inline SelectionResult full_binning_select(const Dataset& data, std::size_t n, std::size_t bins, std::uint64_t seed,
                                           std::uint64_t memory_budget = kDefaultMemoryBudget,
                                           std::size_t workers = 1) {
    SelectionConfig cfg;
    cfg.n = n;
    cfg.working_size = data.rows();
    cfg.iterations = 1;
    cfg.estimator.kind = EstimatorKind::Histogram;
    cfg.estimator.bins = bins;
    cfg.estimator.memory_budget = memory_budget;
    cfg.seed = seed;
    cfg.workers = workers;
    return predictor_select(data, cfg);
}

}  // namespace phasefold

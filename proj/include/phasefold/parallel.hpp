#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "phasefold/error.hpp"

namespace phasefold {

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
};

/// Fixed logical partitioning of 0..N-1. The ranges depend on N and the chunk
/// size only; the worker count decides scheduling, never arithmetic order.
struct PartitionPlan {
    static constexpr std::size_t kDefaultChunk = 65536;

    std::size_t rows = 0;
    std::size_t chunk = kDefaultChunk;
    std::size_t workers = 1;

    PartitionPlan() = default;
    PartitionPlan(std::size_t n, std::size_t workers_, std::size_t chunk_ = kDefaultChunk)
        : rows(n), chunk(std::max<std::size_t>(chunk_, 1)), workers(std::max<std::size_t>(workers_, 1)) {}

    std::size_t partitions() const noexcept { return rows == 0 ? 0 : (rows + chunk - 1) / chunk; }
    RowRange range(std::size_t p) const noexcept {
        const std::size_t b = p * chunk;
        return {b, std::min(rows, b + chunk)};
    }
    std::vector<RowRange> ranges() const {
        std::vector<RowRange> out;
        for (std::size_t p = 0; p < partitions(); ++p) out.push_back(range(p));
        return out;
    }
};

/// Worker count from PHASEFOLD_WORKERS, else the hardware concurrency.
inline std::size_t default_workers() {
    if (const char* env = std::getenv("PHASEFOLD_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Run body(partition, range) for every partition. Partitions are claimed
/// dynamically; failures are reported for the lowest failing partition id.
template <class Body>
void parallel_for(const PartitionPlan& plan, Body&& body) {
    const std::size_t parts = plan.partitions();
    if (parts == 0) return;
    std::mutex err_mutex;
    std::size_t failed_part = parts;
    std::string failed_what;
    auto record = [&](std::size_t p, std::string what) {
        std::lock_guard lock(err_mutex);
        if (p < failed_part) {
            failed_part = p;
            failed_what = std::move(what);
        }
    };
    auto run = [&](std::size_t p) {
        try {
            body(p, plan.range(p));
        } catch (const std::exception& e) {
            record(p, e.what());
        } catch (...) {
            record(p, "unknown exception");
        }
    };
    const std::size_t workers = std::min(plan.workers, parts);
    if (workers <= 1) {
        for (std::size_t p = 0; p < parts; ++p) run(p);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t p = next.fetch_add(1); p < parts; p = next.fetch_add(1)) run(p);
            });
        }
    }
    if (failed_part < parts) throw PartitionFailed(failed_part, failed_what);
}

/// out[i] = f(i) for every row; each partition writes a disjoint slice.
template <class Out, class F>
void parallel_map(const PartitionPlan& plan, Out&& out, F&& f) {
    parallel_for(plan, [&](std::size_t, RowRange r) {
        for (std::size_t i = r.begin; i < r.end; ++i) out[i] = f(i);
    });
}

/// Sum of f(i): sequential within each partition, partials combined in
/// partition order. Bitwise identical for any worker count.
template <class F>
double parallel_reduce(const PartitionPlan& plan, F&& f) {
    std::vector<double> partial(plan.partitions(), 0.0);
    parallel_for(plan, [&](std::size_t p, RowRange r) {
        double acc = 0.0;
        for (std::size_t i = r.begin; i < r.end; ++i) acc += f(i);
        partial[p] = acc;
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

inline double parallel_reduce_sum(std::span<const double> values, const PartitionPlan& plan) {
    if (plan.rows != values.size()) throw Error(ErrorCode::InvalidArgument, "plan does not cover values");
    return parallel_reduce(plan, [&](std::size_t i) { return values[i]; });
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    void reset() { start_ = std::chrono::steady_clock::now(); }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace phasefold

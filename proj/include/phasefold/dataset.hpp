#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "phasefold/error.hpp"
#include "phasefold/rng.hpp"

namespace phasefold {

/// Immutable N x D matrix of finite reals, stored row-major.
class Dataset {
public:
    Dataset(std::size_t rows, std::size_t dims, std::vector<double> values,
            std::vector<std::string> column_names = {}, std::string source = {})
        : rows_(rows), dims_(dims), values_(std::move(values)),
          names_(std::move(column_names)), source_(std::move(source)) {
        if (rows_ == 0 || dims_ == 0) {
            throw Error(ErrorCode::EmptyDataset, "dataset needs N >= 1 and D >= 1");
        }
        if (values_.size() != rows_ * dims_) {
            throw Error(ErrorCode::InvalidArgument, "value count does not match N x D");
        }
        for (std::size_t k = 0; k < values_.size(); ++k) {
            if (!std::isfinite(values_[k])) {
                throw Error(ErrorCode::NonFiniteValue,
                            "row " + std::to_string(k / dims_) + ", column " + std::to_string(k % dims_));
            }
        }
        if (names_.empty()) {
            names_.reserve(dims_);
            for (std::size_t d = 0; d < dims_; ++d) names_.push_back("x" + std::to_string(d));
        } else if (names_.size() != dims_) {
            throw Error(ErrorCode::InvalidArgument, "column name count does not match D");
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dims() const noexcept { return dims_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {values_.data() + i * dims_, dims_};
    }
    double operator()(std::size_t i, std::size_t d) const noexcept { return values_[i * dims_ + d]; }
    const std::vector<std::string>& column_names() const noexcept { return names_; }
    const std::string& source() const noexcept { return source_; }

    /// Gather rows in the given order into a new dataset.
    Dataset select_rows(std::span<const std::size_t> indices, std::string source = {}) const {
        std::vector<double> out;
        out.reserve(indices.size() * dims_);
        for (std::size_t i : indices) {
            if (i >= rows_) {
                throw Error(ErrorCode::IndexOutOfRange,
                            "row " + std::to_string(i) + " of " + std::to_string(rows_));
            }
            auto r = row(i);
            out.insert(out.end(), r.begin(), r.end());
        }
        return Dataset(indices.size(), dims_, std::move(out), names_,
                       source.empty() ? source_ : std::move(source));
    }

    /// Keep the first `count` columns.
    Dataset leading_columns(std::size_t count) const {
        if (count == 0 || count > dims_) throw Error(ErrorCode::InvalidArgument, "bad column count");
        std::vector<double> out;
        out.reserve(rows_ * count);
        for (std::size_t i = 0; i < rows_; ++i) {
            auto r = row(i);
            out.insert(out.end(), r.begin(), r.begin() + static_cast<std::ptrdiff_t>(count));
        }
        return Dataset(rows_, count, std::move(out),
                       std::vector<std::string>(names_.begin(), names_.begin() + static_cast<std::ptrdiff_t>(count)),
                       source_);
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.rows_ == b.rows_ && a.dims_ == b.dims_ && a.values_ == b.values_;
    }

private:
    std::size_t rows_;
    std::size_t dims_;
    std::vector<double> values_;
    std::vector<std::string> names_;
    std::string source_;
};

/// Bijection on 0..N-1; shuffled row i is original row order[i].
struct Permutation {
    std::uint64_t seed = 0;
    std::vector<std::size_t> order;

    bool is_bijection() const {
        std::vector<std::size_t> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] != i) return false;
        }
        return true;
    }
};

inline constexpr std::uint64_t kShuffleTag = rng::tag("shuffle");
inline constexpr std::uint64_t kSubsetTag = rng::tag("subset");

/// First `count` entries of a seeded Fisher-Yates permutation of 0..n-1.
/// With count == n this is the full permutation.
inline std::vector<std::size_t> partial_permutation(std::size_t n, std::size_t count, std::uint64_t seed,
                                                    std::uint64_t tag) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng::Stream stream(seed, tag);
    const std::size_t stop = std::min(count, n > 0 ? n - 1 : 0);
    for (std::size_t i = 0; i < stop; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(stream.below(n - i));
        std::swap(order[i], order[j]);
    }
    order.resize(count);
    return order;
}

inline Permutation make_permutation(std::size_t n, std::uint64_t seed) {
    return Permutation{seed, partial_permutation(n, n, seed, kShuffleTag)};
}

inline std::pair<Dataset, Permutation> shuffle(const Dataset& data, std::uint64_t seed) {
    Permutation perm = make_permutation(data.rows(), seed);
    Dataset out = data.select_rows(perm.order);
    return {std::move(out), std::move(perm)};
}

/// M row indices drawn uniformly without replacement.
inline std::vector<std::size_t> random_indices(std::size_t n, std::size_t m, std::uint64_t seed) {
    if (m < 1 || m > n) {
        throw Error(ErrorCode::InvalidArgument,
                    "subset size " + std::to_string(m) + " not in [1, " + std::to_string(n) + "]");
    }
    return partial_permutation(n, m, seed, kSubsetTag);
}

inline Dataset random_subset(const Dataset& data, std::size_t m, std::uint64_t seed) {
    return data.select_rows(random_indices(data.rows(), m, seed));
}

/// Per-dimension affine map of [min_d, max_d] onto [lo, hi].
struct ScalingTransform {
    double target_lo = -4.0;
    double target_hi = 4.0;
    std::vector<double> offset;  // fitted minimum per dimension
    std::vector<double> extent;  // fitted max - min; 0 marks a degenerate dimension

    std::size_t dims() const noexcept { return offset.size(); }
    bool degenerate(std::size_t d) const noexcept { return extent[d] == 0.0; }

    std::vector<std::size_t> degenerate_dims() const {
        std::vector<std::size_t> out;
        for (std::size_t d = 0; d < dims(); ++d) {
            if (degenerate(d)) out.push_back(d);
        }
        return out;
    }

    double forward(std::size_t d, double x) const noexcept {
        if (degenerate(d)) return 0.5 * (target_lo + target_hi);
        return target_lo + (x - offset[d]) / extent[d] * (target_hi - target_lo);
    }

    double inverse(std::size_t d, double y) const noexcept {
        if (degenerate(d)) return offset[d];
        return offset[d] + (y - target_lo) / (target_hi - target_lo) * extent[d];
    }

    /// Factor by which distances along dimension d are multiplied.
    double scale(std::size_t d) const noexcept {
        return degenerate(d) ? 0.0 : (target_hi - target_lo) / extent[d];
    }
};

inline ScalingTransform fit_rescaler(const Dataset& data, double lo = -4.0, double hi = 4.0) {
    if (!(lo < hi)) throw Error(ErrorCode::InvalidArgument, "rescale range needs lo < hi");
    ScalingTransform t;
    t.target_lo = lo;
    t.target_hi = hi;
    t.offset.assign(data.dims(), 0.0);
    t.extent.assign(data.dims(), 0.0);
    for (std::size_t d = 0; d < data.dims(); ++d) {
        double mn = data(0, d), mx = data(0, d);
        for (std::size_t i = 1; i < data.rows(); ++i) {
            mn = std::min(mn, data(i, d));
            mx = std::max(mx, data(i, d));
        }
        t.offset[d] = mn;
        t.extent[d] = mx - mn;
    }
    return t;
}

inline Dataset apply_rescaler(const ScalingTransform& t, const Dataset& data) {
    if (t.dims() != data.dims()) throw Error(ErrorCode::InvalidArgument, "rescaler dimension mismatch");
    std::vector<double> out(data.values().begin(), data.values().end());
    const std::size_t D = data.dims();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = t.forward(k % D, out[k]);
    return Dataset(data.rows(), D, std::move(out), data.column_names(), data.source());
}

inline Dataset invert_rescaler(const ScalingTransform& t, const Dataset& data) {
    if (t.dims() != data.dims()) throw Error(ErrorCode::InvalidArgument, "rescaler dimension mismatch");
    std::vector<double> out(data.values().begin(), data.values().end());
    const std::size_t D = data.dims();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = t.inverse(k % D, out[k]);
    return Dataset(data.rows(), D, std::move(out), data.column_names(), data.source());
}

}  // namespace phasefold

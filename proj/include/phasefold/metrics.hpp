#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "phasefold/dataset.hpp"
#include "phasefold/io.hpp"
#include "phasefold/parallel.hpp"
#include "phasefold/selection.hpp"

namespace phasefold {

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

namespace detail {

// Both search paths compute distances with this one routine so their results
// match bit for bit.
inline double squared_distance(const double* a, const double* b, std::size_t D) noexcept {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
        const double t = a[d] - b[d];
        s += t * t;
    }
    return s;
}

struct Best {
    double d2 = std::numeric_limits<double>::infinity();
    std::size_t index = std::numeric_limits<std::size_t>::max();

    void offer(double d2_, std::size_t j) noexcept {
        if (d2_ < d2 || (d2_ == d2 && j < index)) {
            d2 = d2_;
            index = j;
        }
    }
};

}  // namespace detail

/// O(n^2) reference: nearest other row for every row, lower index on ties.
inline std::vector<Neighbor> nearest_neighbors_bruteforce(const Dataset& pts) {
    const std::size_t n = pts.rows(), D = pts.dims();
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "nearest neighbours need at least two points");
    const double* v = pts.values().data();
    std::vector<Neighbor> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        detail::Best best;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) best.offer(detail::squared_distance(v + i * D, v + j * D, D), j);
        }
        out[i] = {best.index, std::sqrt(best.d2)};
    }
    return out;
}

/// Exact k-d tree over the rows of a dataset. Immutable after construction;
/// concurrent queries are safe.
class KdTree {
public:
    static constexpr std::size_t kLeafSize = 16;

    explicit KdTree(const Dataset& pts) : pts_(pts), order_(pts.rows()) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        nodes_.reserve(2 * pts.rows() / kLeafSize + 2);
        build(0, order_.size());
    }

    /// Nearest row other than `self` (pass npos to allow every row).
    Neighbor nearest(std::span<const double> q, std::size_t self) const {
        detail::Best best;
        search(0, q.data(), self, best);
        return {best.index, std::sqrt(best.d2)};
    }

    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

private:
    struct Node {
        std::size_t begin, end;  // slice of order_
        std::size_t dim = 0;
        double split = 0.0;
        std::size_t left = npos, right = npos;
    };

    std::size_t build(std::size_t begin, std::size_t end) {
        const std::size_t id = nodes_.size();
        nodes_.push_back(Node{begin, end});
        if (end - begin <= kLeafSize) return id;
        const std::size_t D = pts_.dims();
        std::size_t dim = 0;
        double spread = -1.0;
        for (std::size_t d = 0; d < D; ++d) {
            double lo = pts_(order_[begin], d), hi = lo;
            for (std::size_t k = begin + 1; k < end; ++k) {
                lo = std::min(lo, pts_(order_[k], d));
                hi = std::max(hi, pts_(order_[k], d));
            }
            if (hi - lo > spread) {
                spread = hi - lo;
                dim = d;
            }
        }
        if (spread <= 0.0) return id;  // all points identical: keep as a leaf
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t a, std::size_t b) { return pts_(a, dim) < pts_(b, dim); });
        const double split = pts_(order_[mid], dim);
        const std::size_t l = build(begin, mid);
        const std::size_t r = build(mid, end);
        nodes_[id].dim = dim;
        nodes_[id].split = split;
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    void search(std::size_t id, const double* q, std::size_t self, detail::Best& best) const {
        const Node& node = nodes_[id];
        const std::size_t D = pts_.dims();
        if (node.left == npos) {
            const double* v = pts_.values().data();
            for (std::size_t k = node.begin; k < node.end; ++k) {
                const std::size_t j = order_[k];
                if (j != self) best.offer(detail::squared_distance(q, v + j * D, D), j);
            }
            return;
        }
        // Left holds values <= split, right holds values >= split.
        const double diff = q[node.dim] - node.split;
        const std::size_t near = diff < 0.0 ? node.left : node.right;
        const std::size_t far = diff < 0.0 ? node.right : node.left;
        search(near, q, self, best);
        // Strict comparison keeps equal-distance candidates reachable for the
        // index tie-break.
        if (!(diff * diff > best.d2)) search(far, q, self, best);
    }

    const Dataset& pts_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

inline std::vector<Neighbor> nearest_neighbors(const Dataset& pts, std::size_t workers = 1) {
    const std::size_t n = pts.rows();
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "nearest neighbours need at least two points");
    KdTree tree(pts);
    std::vector<Neighbor> out(n);
    parallel_map(PartitionPlan(n, workers), out,
                 [&](std::size_t i) { return tree.nearest(pts.row(i), i); });
    return out;
}

/// Mean distance from each point to its nearest other point. With a scaler
/// the points are mapped through it first (fit on a parent dataset to make
/// methods comparable).
inline double distance_criterion(const Dataset& pts, const ScalingTransform* scaler = nullptr,
                                 std::size_t workers = 1) {
    if (pts.rows() < 2) throw Error(ErrorCode::InvalidArgument, "distance criterion needs at least two points");
    const Dataset view = scaler ? apply_rescaler(*scaler, pts) : pts;
    const auto nn = nearest_neighbors(view, workers);
    double sum = 0.0;
    for (const auto& e : nn) sum += e.distance;
    return sum / static_cast<double>(nn.size());
}

/// Criterion with the [-4, 4] rescaling fit on the points themselves.
inline double distance_criterion_rescaled(const Dataset& pts, std::size_t workers = 1) {
    const ScalingTransform s = fit_rescaler(pts);
    return distance_criterion(pts, &s, workers);
}

/// Per-bin statistics of the acceptance error against the exact acceptance.
struct ConditionalErrorCurve {
    std::vector<double> bin_center;
    std::vector<double> rel_err;  // NaN where the bin is empty
    std::vector<double> abs_err;
    std::vector<std::size_t> count;

    std::size_t bins() const noexcept { return count.size(); }
    bool empty_bin(std::size_t b) const noexcept { return count[b] == 0; }

    /// Count-weighted mean relative error over the highest `fraction` of bins.
    double upper_bins_rel_err(double fraction = 0.1) const {
        const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * bins())));
        double sum = 0.0;
        std::size_t c = 0;
        for (std::size_t b = bins() - take; b < bins(); ++b) {
            if (count[b] == 0) continue;
            sum += rel_err[b] * static_cast<double>(count[b]);
            c += count[b];
        }
        return c == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(c);
    }
};

/// Bin points by exact acceptance into equal-width bins over its observed
/// range and average |est - exact| / exact and |est - exact| per bin.
inline ConditionalErrorCurve conditional_error_curve(std::span<const double> exact, std::span<const double> estimated,
                                                     std::size_t bins = 20) {
    if (exact.size() != estimated.size() || exact.empty()) {
        throw Error(ErrorCode::InvalidArgument, "exact and estimated acceptance differ in length");
    }
    if (bins < 1) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
    const auto [mn_it, mx_it] = std::minmax_element(exact.begin(), exact.end());
    const double lo = *mn_it, hi = *mx_it;
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    ConditionalErrorCurve c;
    c.bin_center.resize(bins);
    c.rel_err.assign(bins, 0.0);
    c.abs_err.assign(bins, 0.0);
    c.count.assign(bins, 0);
    for (std::size_t i = 0; i < exact.size(); ++i) {
        if (!(exact[i] > 0.0)) throw Error(ErrorCode::InvalidArgument, "exact acceptance must be positive");
        const auto b = std::min(static_cast<std::size_t>((exact[i] - lo) / width), bins - 1);
        const double err = std::abs(estimated[i] - exact[i]);
        c.abs_err[b] += err;
        c.rel_err[b] += err / exact[i];
        ++c.count[b];
    }
    for (std::size_t b = 0; b < bins; ++b) {
        c.bin_center[b] = lo + (static_cast<double>(b) + 0.5) * width;
        if (c.count[b] == 0) {
            c.rel_err[b] = c.abs_err[b] = std::numeric_limits<double>::quiet_NaN();
        } else {
            c.rel_err[b] /= static_cast<double>(c.count[b]);
            c.abs_err[b] /= static_cast<double>(c.count[b]);
        }
    }
    return c;
}

/// Compare estimated log-scores against a known density, both calibrated to
/// the same target over the full dataset.
template <class LogPdf>
ConditionalErrorCurve conditional_acceptance_error(LogPdf&& log_pdf, std::span<const double> estimated_log_scores,
                                                   const Dataset& data, double target, std::size_t bins = 20,
                                                   std::size_t workers = 1) {
    if (estimated_log_scores.size() != data.rows()) {
        throw Error(ErrorCode::InvalidArgument, "one estimated score per row required");
    }
    const auto exact = exact_pdf_acceptance(log_pdf, data, target, workers).probabilities();
    const PartitionPlan plan(data.rows(), workers);
    const auto est = build_profile({estimated_log_scores.begin(), estimated_log_scores.end()}, target, data.rows(), plan)
                         .probabilities();
    return conditional_error_curve(exact, est, bins);
}

inline void write_curve_csv(std::ostream& out, const ConditionalErrorCurve& c) {
    out << "bin_center,rel_err,abs_err,count\n";
    for (std::size_t b = 0; b < c.bins(); ++b) {
        out << io::format_double(c.bin_center[b]) << ',';
        if (c.empty_bin(b)) {
            out << ",,";
        } else {
            out << io::format_double(c.rel_err[b]) << ',' << io::format_double(c.abs_err[b]) << ',';
        }
        out << c.count[b] << '\n';
    }
}

}  // namespace phasefold

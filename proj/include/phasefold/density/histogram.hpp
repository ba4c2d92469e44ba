#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "phasefold/dataset.hpp"

namespace phasefold {

inline constexpr std::uint64_t kDefaultMemoryBudget = std::uint64_t{4} << 30;  // 4 GiB

/// Equidistant-bin histogram over the bounding box of its training data.
///
/// Densities are mass / bin_volume with a floor of 1e-12 x the largest bin
/// mass. Queries outside the box get the floor.
class HistogramDensity {
public:
    static constexpr double kFloorRatio = 1e-12;

    HistogramDensity(std::size_t bins, std::vector<double> lo, std::vector<double> hi, std::vector<double> mass,
                     std::size_t trained_on)
        : bins_(bins), lo_(std::move(lo)), hi_(std::move(hi)), mass_(std::move(mass)), trained_on_(trained_on) {
        if (lo_.size() != hi_.size() || bins_ < 1) throw Error(ErrorCode::InvalidArgument, "bad histogram shape");
        width_.resize(lo_.size());
        for (std::size_t d = 0; d < lo_.size(); ++d) width_[d] = (hi_[d] - lo_[d]) / static_cast<double>(bins_);
        finish();
    }

    std::size_t dims() const noexcept { return lo_.size(); }
    std::size_t bins_per_dim() const noexcept { return bins_; }
    std::size_t trained_on() const noexcept { return trained_on_; }
    std::span<const double> masses() const noexcept { return mass_; }
    std::span<const double> lower() const noexcept { return lo_; }
    std::span<const double> widths() const noexcept { return width_; }
    double floor_mass() const noexcept { return floor_; }
    double bin_volume() const noexcept { return volume_; }
    std::span<const double> upper() const noexcept { return hi_; }

    /// Flat cell index of x, or npos when x is outside the box.
    std::size_t cell(std::span<const double> x) const noexcept {
        std::size_t flat = 0;
        for (std::size_t d = 0; d < dims(); ++d) {
            const double t = (x[d] - lo_[d]) / width_[d];
            if (!(t >= 0.0) || x[d] > hi_[d]) return npos;
            const auto b = std::min(static_cast<std::size_t>(t), bins_ - 1);
            flat = flat * bins_ + b;
        }
        return flat;
    }

    double log_density(std::span<const double> x) const noexcept {
        const std::size_t c = cell(x);
        const double m = c == npos ? floor_ : std::max(mass_[c], floor_);
        return std::log(m) - log_volume_;
    }

    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

private:
    void finish() {
        double mx = 0.0;
        for (double m : mass_) mx = std::max(mx, m);
        floor_ = kFloorRatio * mx;
        log_volume_ = 0.0;
        for (double w : width_) log_volume_ += std::log(w);
        volume_ = std::exp(log_volume_);
    }

    std::size_t bins_;
    std::vector<double> lo_;
    std::vector<double> hi_;
    std::vector<double> width_;
    std::vector<double> mass_;
    std::size_t trained_on_;
    double floor_ = 0.0;
    double log_volume_ = 0.0;
    double volume_ = 1.0;
};

/// Bytes a dense B^D histogram would need; saturates instead of overflowing.
inline std::uint64_t histogram_bytes(std::size_t bins, std::size_t dims) {
    long double cells = 1.0L;
    for (std::size_t d = 0; d < dims; ++d) cells *= static_cast<long double>(bins);
    const long double bytes = cells * sizeof(double);
    if (bytes >= static_cast<long double>(std::numeric_limits<std::uint64_t>::max())) {
        return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(bytes);
}

inline HistogramDensity fit_histogram(const Dataset& working, std::size_t bins,
                                      std::uint64_t memory_budget = kDefaultMemoryBudget) {
    if (bins < 1) throw Error(ErrorCode::InvalidArgument, "histogram needs at least one bin per dimension");
    const std::size_t D = working.dims();
    const std::uint64_t need = histogram_bytes(bins, D);
    if (need > memory_budget) {
        throw Error(ErrorCode::OutOfMemoryBudget, std::to_string(bins) + "^" + std::to_string(D) + " bins need " +
                                                      std::to_string(need) + " bytes, budget is " +
                                                      std::to_string(memory_budget));
    }
    std::vector<double> lo(D), hi(D), width(D);
    for (std::size_t d = 0; d < D; ++d) {
        double mn = working(0, d), mx = working(0, d);
        for (std::size_t i = 1; i < working.rows(); ++i) {
            mn = std::min(mn, working(i, d));
            mx = std::max(mx, working(i, d));
        }
        if (mx > mn) {
            lo[d] = mn;
            hi[d] = mx;
        } else {
            // Constant dimension: unit-extent box centred on the value.
            lo[d] = mn - 0.5;
            hi[d] = mn + 0.5;
        }
        width[d] = (hi[d] - lo[d]) / static_cast<double>(bins);
    }
    std::vector<double> counts(static_cast<std::size_t>(need / sizeof(double)), 0.0);
    for (std::size_t i = 0; i < working.rows(); ++i) {
        auto x = working.row(i);
        std::size_t flat = 0;
        for (std::size_t d = 0; d < D; ++d) {
            const double t = (x[d] - lo[d]) / width[d];
            flat = flat * bins + std::min(static_cast<std::size_t>(std::max(t, 0.0)), bins - 1);
        }
        counts[flat] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(working.rows());
    for (double& c : counts) c *= inv;
    return HistogramDensity(bins, std::move(lo), std::move(hi), std::move(counts), working.rows());
}

}  // namespace phasefold

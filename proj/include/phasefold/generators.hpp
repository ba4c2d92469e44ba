#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "phasefold/dataset.hpp"

namespace phasefold {

/// Axis-aligned normal with diagonal covariance.
struct GaussianSpec {
    std::vector<double> mean;
    std::vector<double> variance;
    std::size_t count = 0;
};

struct MixtureComponent {
    double weight = 1.0;
    std::vector<double> mean;
    std::vector<double> variance;
};

struct MixtureSpec {
    std::vector<MixtureComponent> components;
    std::size_t count = 0;
};

/// Two features from the 2D mixture surrogate plus the label
/// 10 cos(w1 (f1 - min f1)) sin(w2 (f2 - min f2)) + noise, where w1 and w2 fit
/// 2.5 and 1.5 periods across the realized feature extents.
struct SinusoidSpec {
    std::size_t count = 0;
    double noise = 0.0;
};

using GeneratorSpec = std::variant<GaussianSpec, MixtureSpec, SinusoidSpec>;

namespace detail {

inline constexpr std::uint64_t kGenTag = rng::tag("generate");

inline void check_diag(const std::vector<double>& mean, const std::vector<double>& var) {
    if (mean.empty() || mean.size() != var.size()) {
        throw Error(ErrorCode::InvalidArgument, "mean and variance must be nonempty and equal length");
    }
    for (double v : var) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "variance must be >= 0");
    }
}

inline void check_mixture(const MixtureSpec& spec) {
    if (spec.components.empty()) throw Error(ErrorCode::InvalidArgument, "mixture needs components");
    double total = 0.0;
    const std::size_t D = spec.components.front().mean.size();
    for (const auto& c : spec.components) {
        check_diag(c.mean, c.variance);
        if (c.mean.size() != D) throw Error(ErrorCode::InvalidArgument, "mixture components differ in D");
        if (!(c.weight >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative mixture weight");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "mixture weights must sum to 1");
}

}  // namespace detail

/// Mixture sample plus the component each row was drawn from.
inline std::pair<Dataset, std::vector<std::size_t>> generate_mixture_labeled(const MixtureSpec& spec,
                                                                            std::uint64_t seed) {
    detail::check_mixture(spec);
    if (spec.count < 1) throw Error(ErrorCode::InvalidArgument, "N must be >= 1");
    const std::size_t D = spec.components.front().mean.size();
    std::vector<double> values(spec.count * D);
    std::vector<std::size_t> labels(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        rng::Stream s(rng::hash(seed, detail::kGenTag, i), detail::kGenTag);
        const double u = s.uniform();
        double acc = 0.0;
        std::size_t k = 0;
        for (; k + 1 < spec.components.size(); ++k) {
            acc += spec.components[k].weight;
            if (u < acc) break;
        }
        labels[i] = k;
        const auto& c = spec.components[k];
        for (std::size_t d = 0; d < D; ++d) values[i * D + d] = c.mean[d] + std::sqrt(c.variance[d]) * s.normal();
    }
    return {Dataset(spec.count, D, std::move(values), {}, "generated:mixture"), std::move(labels)};
}

inline Dataset generate_gaussian(const GaussianSpec& spec, std::uint64_t seed) {
    detail::check_diag(spec.mean, spec.variance);
    MixtureSpec m{{MixtureComponent{1.0, spec.mean, spec.variance}}, spec.count};
    auto [data, labels] = generate_mixture_labeled(m, seed);
    return Dataset(data.rows(), data.dims(), std::vector<double>(data.values().begin(), data.values().end()), {},
                   "generated:gaussian");
}

/// Multimodal surrogate with weights {0.7, 0.25, 0.05}: a broad core, a
/// secondary mode and a small rare mode.
inline MixtureSpec mixture_surrogate(std::size_t dims, std::size_t count) {
    if (dims < 1) throw Error(ErrorCode::InvalidArgument, "surrogate needs D >= 1");
    MixtureSpec spec;
    spec.count = count;
    MixtureComponent core{0.7, std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)};
    MixtureComponent second{0.25, std::vector<double>(dims, 3.0), std::vector<double>(dims, 0.5)};
    MixtureComponent rare{0.05, std::vector<double>(dims), std::vector<double>(dims, 0.25)};
    for (std::size_t d = 0; d < dims; ++d) rare.mean[d] = (d % 2 == 0) ? -3.0 : 3.0;
    spec.components = {core, second, rare};
    return spec;
}

/// Label function of the sinusoid dataset for a feature point given the
/// feature bounding box.
inline double sinusoid_label(double f1, double f2, double lo1, double hi1, double lo2, double hi2) {
    const double w1 = 2.0 * std::numbers::pi * 2.5 / (hi1 - lo1);
    const double w2 = 2.0 * std::numbers::pi * 1.5 / (hi2 - lo2);
    return 10.0 * std::cos(w1 * (f1 - lo1)) * std::sin(w2 * (f2 - lo2));
}

inline Dataset generate_sinusoid(const SinusoidSpec& spec, std::uint64_t seed) {
    if (spec.count < 2) throw Error(ErrorCode::InvalidArgument, "sinusoid dataset needs N >= 2");
    if (!(spec.noise >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise must be >= 0");
    auto [features, labels] = generate_mixture_labeled(mixture_surrogate(2, spec.count), seed);
    double lo1 = features(0, 0), hi1 = lo1, lo2 = features(0, 1), hi2 = lo2;
    for (std::size_t i = 0; i < features.rows(); ++i) {
        lo1 = std::min(lo1, features(i, 0));
        hi1 = std::max(hi1, features(i, 0));
        lo2 = std::min(lo2, features(i, 1));
        hi2 = std::max(hi2, features(i, 1));
    }
    constexpr std::uint64_t kNoiseTag = rng::tag("sinusoid-noise");
    std::vector<double> values;
    values.reserve(spec.count * 3);
    for (std::size_t i = 0; i < spec.count; ++i) {
        const double f1 = features(i, 0), f2 = features(i, 1);
        rng::Stream s(rng::hash(seed, kNoiseTag, i), kNoiseTag);
        values.push_back(f1);
        values.push_back(f2);
        values.push_back(sinusoid_label(f1, f2, lo1, hi1, lo2, hi2) + spec.noise * s.normal());
    }
    return Dataset(spec.count, 3, std::move(values), {"f1", "f2", "label"}, "generated:sinusoid");
}

inline Dataset generate(const GeneratorSpec& spec, std::uint64_t seed) {
    return std::visit(
        [&](const auto& s) -> Dataset {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianSpec>) {
                return generate_gaussian(s, seed);
            } else if constexpr (std::is_same_v<T, MixtureSpec>) {
                return generate_mixture_labeled(s, seed).first;
            } else {
                return generate_sinusoid(s, seed);
            }
        },
        spec);
}

/// Log density of a diagonal Gaussian; the reference for exact acceptance.
inline auto gaussian_log_pdf(const GaussianSpec& spec) {
    detail::check_diag(spec.mean, spec.variance);
    return [spec](std::span<const double> x) {
        double lp = 0.0;
        for (std::size_t d = 0; d < spec.mean.size(); ++d) {
            const double z = x[d] - spec.mean[d];
            lp -= 0.5 * (z * z / spec.variance[d] + std::log(2.0 * std::numbers::pi * spec.variance[d]));
        }
        return lp;
    };
}

/// Log density of a diagonal Gaussian mixture.
inline auto mixture_log_pdf(const MixtureSpec& spec) {
    detail::check_mixture(spec);
    double total = 0.0;
    for (const auto& c : spec.components) total += c.weight;
    std::vector<std::pair<double, GaussianSpec>> parts;
    for (const auto& c : spec.components) parts.push_back({std::log(c.weight / total), GaussianSpec{c.mean, c.variance, 0}});
    return [parts = std::move(parts)](std::span<const double> x) {
        double hi = -std::numeric_limits<double>::infinity();
        std::vector<double> terms;
        terms.reserve(parts.size());
        for (const auto& [lw, g] : parts) {
            terms.push_back(lw + gaussian_log_pdf(g)(x));
            hi = std::max(hi, terms.back());
        }
        if (!std::isfinite(hi)) return hi;
        double s = 0.0;
        for (double t : terms) s += std::exp(t - hi);
        return hi + std::log(s);
    };
}

/// Named datasets used by the CLI and the experiment harness.
inline GeneratorSpec named_generator(const std::string& name, std::size_t count) {
    if (name == "normal1d") return GaussianSpec{{0.0}, {1.0}, count};
    if (name == "gaussian2d") return GaussianSpec{{1.0, 1.0}, {1.0, 2.0}, count};
    if (name == "narrow2d") return GaussianSpec{{0.0, 0.0}, {0.1, 0.1}, count};
    if (name == "sinusoid") return SinusoidSpec{count, 0.0};
    if (name.rfind("mixture", 0) == 0) {
        std::size_t dims = 2;
        if (name.size() > 7) {
            const std::string tail = name.substr(7);
            if (tail.size() != 2 || tail[1] != 'd' || tail[0] < '1' || tail[0] > '9') {
                throw Error(ErrorCode::InvalidArgument, "unknown generator '" + name + "'");
            }
            dims = static_cast<std::size_t>(tail[0] - '0');
        }
        return mixture_surrogate(dims, count);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown generator '" + name + "'");
}

}  // namespace phasefold

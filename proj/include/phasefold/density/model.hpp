#pragma once

#include <fstream>
#include <string>
#include <variant>

#include "phasefold/density/flow.hpp"
#include "phasefold/density/histogram.hpp"
#include "phasefold/io.hpp"

namespace phasefold {

enum class EstimatorKind { Histogram, Flow };

inline const char* to_string(EstimatorKind k) { return k == EstimatorKind::Flow ? "flow" : "hist"; }

inline EstimatorKind parse_estimator(const std::string& s) {
    if (s == "flow") return EstimatorKind::Flow;
    if (s == "hist" || s == "histogram") return EstimatorKind::Histogram;
    throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + s + "' (expected flow or hist)");
}

/// A trained density estimator of either kind. Immutable once built, so it
/// can be evaluated from many workers at once.
class DensityModel {
public:
    explicit DensityModel(HistogramDensity h) : impl_(std::move(h)) {}
    explicit DensityModel(FlowDensity f) : impl_(std::move(f)) {}

    EstimatorKind kind() const noexcept {
        return std::holds_alternative<FlowDensity>(impl_) ? EstimatorKind::Flow : EstimatorKind::Histogram;
    }
    std::size_t dims() const {
        return std::visit([](const auto& m) { return m.dims(); }, impl_);
    }
    std::size_t trained_on() const {
        return std::visit([](const auto& m) { return m.trained_on(); }, impl_);
    }
    double log_density(std::span<const double> x) const {
        return std::visit([&](const auto& m) { return m.log_density(x); }, impl_);
    }
    void log_density_batch(std::span<const double> rows, std::size_t count, std::span<double> out) const {
        if (const auto* f = std::get_if<FlowDensity>(&impl_)) {
            f->log_density_batch(rows, count, out);
            return;
        }
        const auto& h = std::get<HistogramDensity>(impl_);
        const std::size_t D = h.dims();
        for (std::size_t i = 0; i < count; ++i) out[i] = h.log_density(rows.subspan(i * D, D));
    }

    const HistogramDensity* histogram() const noexcept { return std::get_if<HistogramDensity>(&impl_); }
    const FlowDensity* flow() const noexcept { return std::get_if<FlowDensity>(&impl_); }

private:
    std::variant<HistogramDensity, FlowDensity> impl_;
};

namespace checkpoint {

inline constexpr char kFlowMagic[4] = {'U', 'P', 'S', 'F'};
inline constexpr char kHistMagic[4] = {'U', 'P', 'S', 'H'};
inline constexpr std::uint32_t kVersion = 1;

/// UPSH: magic, u32 version, u32 D, u32 B, u64 M, f64 lo[D], f64 hi[D],
/// f64 mass[B^D].
inline void write(std::ostream& out, const HistogramDensity& h) {
    out.write(kHistMagic, 4);
    io::write_le<std::uint32_t>(out, kVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.dims()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.bins_per_dim()));
    io::write_le<std::uint64_t>(out, h.trained_on());
    io::write_f64_block(out, h.lower());
    io::write_f64_block(out, h.upper());
    io::write_f64_block(out, h.masses());
}

/// UPSF: magic, u32 version, u32 D, u32 transform, u32 L, u32 K, f64 bound,
/// u32 hidden count, u32 hidden widths[], u64 M, f64 mean[D], f64 std[D],
/// u64 parameter count, f64 parameters[].
inline void write(std::ostream& out, const FlowDensity& f) {
    const auto& a = f.architecture();
    out.write(kFlowMagic, 4);
    io::write_le<std::uint32_t>(out, kVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.transform));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.layers));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.knots));
    io::write_le<double>(out, a.bound);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.hidden.size()));
    for (std::size_t w : a.hidden) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    io::write_le<std::uint64_t>(out, f.trained_on());
    io::write_f64_block(out, f.mean());
    io::write_f64_block(out, f.stddev());
    io::write_le<std::uint64_t>(out, f.parameters().size());
    io::write_f64_block(out, f.parameters());
}

inline DensityModel read(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (!in) throw Error(ErrorCode::Truncated, "model file shorter than header");
    const bool is_flow = std::memcmp(magic, kFlowMagic, 4) == 0;
    const bool is_hist = std::memcmp(magic, kHistMagic, 4) == 0;
    if (!is_flow && !is_hist) throw Error(ErrorCode::BadMagic, "not a UPSF/UPSH model file");
    const auto version = io::read_le<std::uint32_t>(in, "version");
    if (version != kVersion) throw Error(ErrorCode::UnsupportedVersion, "model version " + std::to_string(version));
    const auto D = io::read_le<std::uint32_t>(in, "D");
    if (D == 0) throw Error(ErrorCode::EmptyDataset, "model with D = 0");
    if (is_hist) {
        const auto B = io::read_le<std::uint32_t>(in, "bins");
        const auto M = io::read_le<std::uint64_t>(in, "M");
        auto lo = io::read_f64_block(in, D);
        auto hi = io::read_f64_block(in, D);
        const std::uint64_t cells = histogram_bytes(B, D) / sizeof(double);
        auto mass = io::read_f64_block(in, static_cast<std::size_t>(cells));
        return DensityModel(HistogramDensity(B, std::move(lo), std::move(hi), std::move(mass), M));
    }
    FlowArchitecture a;
    a.dims = D;
    const auto transform = io::read_le<std::uint32_t>(in, "transform");
    if (transform > 1) throw Error(ErrorCode::UnsupportedVersion, "unknown transform kind");
    a.transform = static_cast<TransformKind>(transform);
    a.layers = io::read_le<std::uint32_t>(in, "layers");
    a.knots = io::read_le<std::uint32_t>(in, "knots");
    a.bound = io::read_le<double>(in, "bound");
    a.hidden.resize(io::read_le<std::uint32_t>(in, "hidden count"));
    for (auto& w : a.hidden) w = io::read_le<std::uint32_t>(in, "hidden width");
    const auto M = io::read_le<std::uint64_t>(in, "M");
    auto mean = io::read_f64_block(in, D);
    auto sd = io::read_f64_block(in, D);
    FlowDensity f(a, std::move(mean), std::move(sd));
    const auto count = io::read_le<std::uint64_t>(in, "parameter count");
    if (count != f.parameters().size()) throw Error(ErrorCode::Truncated, "parameter count does not match architecture");
    auto params = io::read_f64_block(in, static_cast<std::size_t>(count));
    std::copy(params.begin(), params.end(), f.parameters().begin());
    f.set_trained_on(M);
    return DensityModel(std::move(f));
}

}  // namespace checkpoint

inline void save_model(const DensityModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
    if (const auto* f = model.flow()) {
        checkpoint::write(out, *f);
    } else {
        checkpoint::write(out, *model.histogram());
    }
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

inline DensityModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    return checkpoint::read(in);
}

/// Estimator choice plus the settings of both kinds.
struct EstimatorConfig {
    EstimatorKind kind = EstimatorKind::Flow;
    std::size_t bins = 100;
    std::uint64_t memory_budget = kDefaultMemoryBudget;
    TrainConfig train;
};

struct EstimatorFit {
    DensityModel model;
    std::vector<double> nll_history;
    double final_nll = 0.0;
};

/// Train the configured estimator on `working`. For histograms the NLL is
/// the mean of -log p over the working set (history has that one entry).
inline EstimatorFit fit_estimator(const Dataset& working, const EstimatorConfig& cfg, std::uint64_t seed) {
    if (cfg.kind == EstimatorKind::Flow) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        FlowFit fit = fit_flow(working, tc);
        return EstimatorFit{DensityModel(std::move(fit.model)), std::move(fit.nll_history), fit.final_nll};
    }
    HistogramDensity h = fit_histogram(working, cfg.bins, cfg.memory_budget);
    double nll = 0.0;
    for (std::size_t i = 0; i < working.rows(); ++i) nll -= h.log_density(working.row(i));
    nll /= static_cast<double>(working.rows());
    return EstimatorFit{DensityModel(std::move(h)), {nll}, nll};
}

}  // namespace phasefold

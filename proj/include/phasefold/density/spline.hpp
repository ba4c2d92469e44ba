#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

/// Elementwise monotone transforms used inside coupling layers, each with a
/// hand-written backward pass.
///
/// Rational-quadratic spline: K bins over [-bound, bound], identity outside,
/// unit derivative at both ends so the tails join continuously. Raw parameter
/// layout per dimension: K width logits, K height logits, K-1 interior
/// derivative pre-activations. All-zero raw parameters give the identity.
namespace phasefold::spline {

inline constexpr double kMinBinWidth = 1e-3;
inline constexpr double kMinBinHeight = 1e-3;
inline constexpr double kMinDerivative = 1e-3;

constexpr std::size_t param_count(std::size_t knots) noexcept { return 3 * knots - 1; }

inline double softplus(double v) noexcept { return v > 30.0 ? v : std::log1p(std::exp(v)); }
inline double sigmoid(double v) noexcept { return 1.0 / (1.0 + std::exp(-v)); }

/// Shift making softplus(0 + shift) + kMinDerivative == 1.
inline double derivative_shift() noexcept {
    static const double shift = std::log(std::expm1(1.0 - kMinDerivative));
    return shift;
}

/// Knot geometry decoded from the raw parameters. Fixed-capacity so decoding
/// does not allocate in the hot loop.
struct Knots {
    static constexpr std::size_t kMaxBins = 64;

    std::size_t bins = 0;
    double bound = 0.0;
    double soft_w[kMaxBins];  // softmax of width logits
    double soft_h[kMaxBins];
    double width[kMaxBins];
    double height[kMaxBins];
    double x[kMaxBins + 1];  // knot abscissae
    double y[kMaxBins + 1];
    double deriv[kMaxBins + 1];

    void decode(std::span<const double> raw, std::size_t K, double B) noexcept {
        bins = K;
        bound = B;
        softmax(raw.subspan(0, K), soft_w);
        softmax(raw.subspan(K, K), soft_h);
        x[0] = -B;
        y[0] = -B;
        for (std::size_t j = 0; j < K; ++j) {
            width[j] = 2.0 * B * (kMinBinWidth + (1.0 - kMinBinWidth * static_cast<double>(K)) * soft_w[j]);
            height[j] = 2.0 * B * (kMinBinHeight + (1.0 - kMinBinHeight * static_cast<double>(K)) * soft_h[j]);
            x[j + 1] = x[j] + width[j];
            y[j + 1] = y[j] + height[j];
        }
        deriv[0] = 1.0;
        deriv[K] = 1.0;
        for (std::size_t j = 1; j < K; ++j) deriv[j] = kMinDerivative + softplus(raw[2 * K + j - 1] + derivative_shift());
    }

    std::size_t bin_of_x(double v) const noexcept { return search(x, v); }
    std::size_t bin_of_y(double v) const noexcept { return search(y, v); }

private:
    std::size_t search(const double* edges, double v) const noexcept {
        const auto it = std::upper_bound(edges + 1, edges + bins, v);
        return static_cast<std::size_t>(it - (edges + 1));
    }

    static void softmax(std::span<const double> u, double* out) noexcept {
        double mx = u[0];
        for (double v : u) mx = std::max(mx, v);
        double total = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) {
            out[j] = std::exp(u[j] - mx);
            total += out[j];
        }
        for (std::size_t j = 0; j < u.size(); ++j) out[j] /= total;
    }
};

struct Eval {
    double y;
    double logdet;
};

inline bool inside(double v, double bound) noexcept { return v >= -bound && v <= bound; }

/// Forward map x -> y with log|dy/dx|.
inline Eval forward(const Knots& kn, double xv) noexcept {
    if (!inside(xv, kn.bound)) return {xv, 0.0};
    const std::size_t k = kn.bin_of_x(xv);
    const double w = kn.width[k], h = kn.height[k];
    const double s = h / w, d0 = kn.deriv[k], d1 = kn.deriv[k + 1];
    const double xi = (xv - kn.x[k]) / w;
    const double t = xi * (1.0 - xi);
    const double den = s + (d1 + d0 - 2.0 * s) * t;
    const double num = h * (s * xi * xi + d0 * t);
    const double e = d1 * xi * xi + 2.0 * s * t + d0 * (1.0 - xi) * (1.0 - xi);
    return {kn.y[k] + num / den, 2.0 * std::log(s) + std::log(e) - 2.0 * std::log(den)};
}

/// Inverse map y -> x with log|dx/dy|.
inline Eval inverse(const Knots& kn, double yv) noexcept {
    if (!inside(yv, kn.bound)) return {yv, 0.0};
    const std::size_t k = kn.bin_of_y(yv);
    const double w = kn.width[k], h = kn.height[k];
    const double s = h / w, d0 = kn.deriv[k], d1 = kn.deriv[k + 1];
    const double dy = yv - kn.y[k];
    const double a = h * (s - d0) + dy * (d1 + d0 - 2.0 * s);
    const double b = h * d0 - dy * (d1 + d0 - 2.0 * s);
    const double c = -s * dy;
    const double disc = std::max(b * b - 4.0 * a * c, 0.0);
    const double xi = (2.0 * c) / (-b - std::sqrt(disc));
    const double xv = xi * w + kn.x[k];
    const double t = xi * (1.0 - xi);
    const double den = s + (d1 + d0 - 2.0 * s) * t;
    const double e = d1 * xi * xi + 2.0 * s * t + d0 * (1.0 - xi) * (1.0 - xi);
    return {xv, -(2.0 * std::log(s) + std::log(e) - 2.0 * std::log(den))};
}

/// Backward pass of forward(): given dL/dy and dL/dlogdet, accumulate dL/draw
/// into `graw` and return dL/dx.
inline double backward(const Knots& kn, std::span<const double> raw, double xv, double gy, double gl,
                       std::span<double> graw) noexcept {
    if (!inside(xv, kn.bound)) return gy;
    const std::size_t K = kn.bins;
    const double B = kn.bound;
    const std::size_t k = kn.bin_of_x(xv);
    const double w = kn.width[k], h = kn.height[k];
    const double s = h / w, d0 = kn.deriv[k], d1 = kn.deriv[k + 1];
    const double xi = (xv - kn.x[k]) / w;
    const double t = xi * (1.0 - xi);
    const double dt = 1.0 - 2.0 * xi;  // dt/dxi
    const double c = d1 + d0 - 2.0 * s;
    const double den = s + c * t;
    const double A = s * xi * xi + d0 * t;
    const double E = d1 * xi * xi + 2.0 * s * t + d0 * (1.0 - xi) * (1.0 - xi);
    const double den2 = den * den;

    // Partials of y and of L = log dy/dx with respect to (xi, s, d0, d1, h).
    const double A_xi = 2.0 * s * xi + d0 * dt;
    const double den_xi = c * dt;
    const double y_xi = h * (A_xi * den - A * den_xi) / den2;
    const double y_s = h * (xi * xi * den - A * (1.0 - 2.0 * t)) / den2;
    const double y_d0 = h * (t * den - A * t) / den2;
    const double y_d1 = -h * A * t / den2;
    const double y_h = A / den;

    const double E_xi = 2.0 * d1 * xi + 2.0 * s * dt - 2.0 * d0 * (1.0 - xi);
    const double L_xi = E_xi / E - 2.0 * den_xi / den;
    const double L_s = 2.0 / s + 2.0 * t / E - 2.0 * (1.0 - 2.0 * t) / den;
    const double L_d0 = (1.0 - xi) * (1.0 - xi) / E - 2.0 * t / den;
    const double L_d1 = xi * xi / E - 2.0 * t / den;

    const double g_xi = gy * y_xi + gl * L_xi;
    const double g_s = gy * y_s + gl * L_s;
    const double g_d0 = gy * y_d0 + gl * L_d0;
    const double g_d1 = gy * y_d1 + gl * L_d1;
    double g_h = gy * y_h + g_s / w;
    double g_w = -g_xi * xi / w - g_s * h / (w * w);
    const double g_xk = -g_xi / w;
    const double g_yk = gy;
    const double g_x = g_xi / w;

    // Knot positions are cumulative sums of the bins to their left.
    double g_width[Knots::kMaxBins] = {};
    double g_height[Knots::kMaxBins] = {};
    g_width[k] += g_w;
    g_height[k] += g_h;
    for (std::size_t j = 0; j < k; ++j) {
        g_width[j] += g_xk;
        g_height[j] += g_yk;
    }

    auto softmax_back = [&](const double* soft, const double* g_bin, double min_frac, std::size_t offset) {
        const double scale = 2.0 * B * (1.0 - min_frac * static_cast<double>(K));
        double dot = 0.0;
        for (std::size_t j = 0; j < K; ++j) dot += soft[j] * g_bin[j] * scale;
        for (std::size_t j = 0; j < K; ++j) graw[offset + j] += soft[j] * (g_bin[j] * scale - dot);
    };
    softmax_back(kn.soft_w, g_width, kMinBinWidth, 0);
    softmax_back(kn.soft_h, g_height, kMinBinHeight, K);

    // Interior derivatives d_j (1 <= j <= K-1) come from raw[2K + j - 1].
    if (k >= 1) graw[2 * K + k - 1] += g_d0 * sigmoid(raw[2 * K + k - 1] + derivative_shift());
    if (k + 1 <= K - 1) graw[2 * K + k] += g_d1 * sigmoid(raw[2 * K + k] + derivative_shift());
    return g_x;
}

}  // namespace phasefold::spline

/// Affine elementwise transform y = x * exp(s) + shift with s soft-clamped to
/// (-kScaleClamp, kScaleClamp). Raw layout: (scale pre-activation, shift).
namespace phasefold::affine {

inline constexpr double kScaleClamp = 3.0;
inline constexpr std::size_t kParamCount = 2;

inline double log_scale(double raw) noexcept { return kScaleClamp * std::tanh(raw / kScaleClamp); }

inline spline::Eval forward(std::span<const double> raw, double x) noexcept {
    const double s = log_scale(raw[0]);
    return {x * std::exp(s) + raw[1], s};
}

inline spline::Eval inverse(std::span<const double> raw, double y) noexcept {
    const double s = log_scale(raw[0]);
    return {(y - raw[1]) * std::exp(-s), -s};
}

inline double backward(std::span<const double> raw, double x, double gy, double gl, std::span<double> graw) noexcept {
    const double th = std::tanh(raw[0] / kScaleClamp);
    const double s = kScaleClamp * th;
    const double es = std::exp(s);
    const double g_s = gy * x * es + gl;
    graw[0] += g_s * (1.0 - th * th);
    graw[1] += gy;
    return gy * es;
}

}  // namespace phasefold::affine

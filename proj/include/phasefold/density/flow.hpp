#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "phasefold/dataset.hpp"
#include "phasefold/density/spline.hpp"

namespace phasefold {

enum class TransformKind : std::uint32_t { Spline = 0, Affine = 1 };

struct FlowArchitecture {
    std::size_t dims = 1;
    std::size_t layers = 4;
    std::size_t knots = 8;
    double bound = 4.0;
    std::vector<std::size_t> hidden = {32, 32};
    TransformKind transform = TransformKind::Spline;

    std::size_t params_per_dim() const noexcept {
        return transform == TransformKind::Spline ? spline::param_count(knots) : affine::kParamCount;
    }
};

struct TrainConfig {
    std::size_t steps = 12000;
    std::size_t batch = 1024;
    double learning_rate = 1e-3;
    double final_lr_factor = 0.1;  // learning rate decays geometrically to this fraction
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t layers = 4;
    std::size_t knots = 8;
    double bound = 4.0;
    std::vector<std::size_t> hidden = {32, 32};
    TransformKind transform = TransformKind::Spline;
    std::uint64_t seed = 0;

    FlowArchitecture architecture(std::size_t dims) const {
        return FlowArchitecture{dims, dims == 1 ? 1 : layers, knots, bound, hidden, transform};
    }
};

/// z, total log|det dz/dx| (including the standardizer) and its parts.
struct FlowEval {
    std::vector<double> z;
    double logdet = 0.0;
    double standardizer_logdet = 0.0;
    std::vector<double> layer_logdets;
};

/// Coupling-layer normalizing flow density.
///
/// The trainable map f runs data -> latent: standardize, then L coupling
/// layers with alternating masks. Each layer leaves the conditioning
/// coordinates untouched and transforms the others with a rational-quadratic
/// spline (or affine map) whose parameters come from an MLP of the
/// conditioning coordinates. log p(x) = log N(f(x); 0, I) + log|det df/dx|.
class FlowDensity {
public:
    using Matrix = Eigen::MatrixXd;

    struct Dense {
        std::size_t in = 0, out = 0, offset = 0;  // weights (out x in, column-major) then bias (out)
    };
    struct Layer {
        std::vector<std::size_t> transformed;
        std::vector<std::size_t> conditioning;
        std::vector<Dense> net;
    };

    FlowDensity(FlowArchitecture arch, std::vector<double> mean, std::vector<double> stddev)
        : arch_(std::move(arch)), mean_(std::move(mean)), std_(std::move(stddev)) {
        if (arch_.dims < 1) throw Error(ErrorCode::InvalidArgument, "flow needs D >= 1");
        if (mean_.size() != arch_.dims || std_.size() != arch_.dims) {
            throw Error(ErrorCode::InvalidArgument, "standardizer dimension mismatch");
        }
        if (arch_.transform == TransformKind::Spline && (arch_.knots < 2 || arch_.knots > spline::Knots::kMaxBins)) {
            throw Error(ErrorCode::InvalidArgument, "spline knots must be in [2, 64]");
        }
        if (!(arch_.bound > 0.0)) throw Error(ErrorCode::InvalidArgument, "spline bound must be positive");
        if (arch_.dims == 1) arch_.layers = 1;
        if (arch_.layers < 1) throw Error(ErrorCode::InvalidArgument, "flow needs at least one layer");
        std::size_t offset = 0;
        for (std::size_t l = 0; l < arch_.layers; ++l) {
            Layer layer;
            for (std::size_t d = 0; d < arch_.dims; ++d) {
                const bool transform = arch_.dims == 1 || d % 2 == l % 2;
                (transform ? layer.transformed : layer.conditioning).push_back(d);
            }
            std::size_t in = layer.conditioning.size();
            std::vector<std::size_t> widths = arch_.hidden;
            widths.push_back(layer.transformed.size() * arch_.params_per_dim());
            for (std::size_t w : widths) {
                layer.net.push_back(Dense{in, w, offset});
                offset += in * w + w;
                in = w;
            }
            layers_.push_back(std::move(layer));
        }
        params_.assign(offset, 0.0);
        for (double s : std_) {
            if (!(s > 0.0)) throw Error(ErrorCode::InvalidArgument, "standardizer std must be positive");
            log_std_sum_ += std::log(s);
        }
    }

    /// Hidden layers Glorot-uniform, output layers zero: the coupling layers
    /// start as the identity.
    void initialize(std::uint64_t seed) {
        rng::Stream s(seed, rng::tag("flow-init"));
        for (const auto& layer : layers_) {
            for (std::size_t k = 0; k < layer.net.size(); ++k) {
                const Dense& d = layer.net[k];
                const bool output = k + 1 == layer.net.size();
                const double a = std::sqrt(6.0 / static_cast<double>(d.in + d.out));
                for (std::size_t i = 0; i < d.in * d.out; ++i) {
                    params_[d.offset + i] = output ? 0.0 : a * (2.0 * s.uniform() - 1.0);
                }
                for (std::size_t i = 0; i < d.out; ++i) params_[d.offset + d.in * d.out + i] = 0.0;
            }
        }
    }

    /// Random non-identity parameters, for exercising the transforms in tests.
    void randomize(std::uint64_t seed, double output_scale = 0.5) {
        initialize(seed);
        rng::Stream s(seed, rng::tag("flow-randomize"));
        for (const auto& layer : layers_) {
            for (std::size_t k = 0; k < layer.net.size(); ++k) {
                const Dense& d = layer.net[k];
                const bool output = k + 1 == layer.net.size();
                const double scale = output ? output_scale : 0.1;
                const std::size_t first = output ? d.offset : d.offset + d.in * d.out;
                for (std::size_t i = first; i < d.offset + d.in * d.out + d.out; ++i) {
                    params_[i] = scale * (2.0 * s.uniform() - 1.0);
                }
            }
        }
    }

    const FlowArchitecture& architecture() const noexcept { return arch_; }
    std::size_t dims() const noexcept { return arch_.dims; }
    std::span<const double> mean() const noexcept { return mean_; }
    std::span<const double> stddev() const noexcept { return std_; }
    std::span<const double> parameters() const noexcept { return params_; }
    std::span<double> parameters() noexcept { return params_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::size_t trained_on() const noexcept { return trained_on_; }
    void set_trained_on(std::size_t m) noexcept { trained_on_ = m; }

    /// log|det| of the standardizer, -sum log std.
    double standardizer_logdet() const noexcept { return -log_std_sum_; }

    double log_density(std::span<const double> x) const {
        double out = 0.0;
        log_density_batch(x, 1, std::span<double>(&out, 1));
        return out;
    }

    /// Log densities of `count` row-major points.
    void log_density_batch(std::span<const double> rows, std::size_t count, std::span<double> out) const {
        constexpr std::size_t kBlock = 2048;
        const std::size_t D = dims();
        Matrix X, Y;
        Eigen::VectorXd logdet;
        for (std::size_t b = 0; b < count; b += kBlock) {
            const std::size_t n = std::min(kBlock, count - b);
            standardize(rows.subspan(b * D, n * D), n, X);
            logdet.setZero(static_cast<Eigen::Index>(n));
            for (const auto& layer : layers_) {
                layer_forward(layer, X, Y, logdet, nullptr);
                X.swap(Y);
            }
            for (std::size_t j = 0; j < n; ++j) {
                out[b + j] = base_log_prob(X.col(static_cast<Eigen::Index>(j))) + logdet[static_cast<Eigen::Index>(j)] -
                             log_std_sum_;
            }
        }
    }

    /// Data -> latent map with its log-determinant broken down per layer.
    FlowEval inverse_and_logdet(std::span<const double> x) const {
        const std::size_t D = dims();
        Matrix X, Y;
        standardize(x, 1, X);
        FlowEval ev;
        ev.standardizer_logdet = -log_std_sum_;
        ev.logdet = ev.standardizer_logdet;
        for (const auto& layer : layers_) {
            Eigen::VectorXd ld = Eigen::VectorXd::Zero(1);
            layer_forward(layer, X, Y, ld, nullptr);
            ev.layer_logdets.push_back(ld[0]);
            ev.logdet += ld[0];
            X.swap(Y);
        }
        ev.z.assign(X.data(), X.data() + D);
        return ev;
    }

    /// Latent -> data map (the generator).
    std::vector<double> forward(std::span<const double> z) const {
        const std::size_t D = dims();
        Matrix Y(static_cast<Eigen::Index>(D), 1), X;
        for (std::size_t d = 0; d < D; ++d) Y(static_cast<Eigen::Index>(d), 0) = z[d];
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
            layer_inverse(*it, Y, X);
            Y.swap(X);
        }
        std::vector<double> out(D);
        for (std::size_t d = 0; d < D; ++d) out[d] = Y(static_cast<Eigen::Index>(d), 0) * std_[d] + mean_[d];
        return out;
    }

    /// Mean negative log-likelihood of `count` row-major points; when `grad`
    /// is non-empty it receives d(mean NLL)/d(parameters).
    double nll_and_grad(std::span<const double> rows, std::size_t count, std::span<double> grad) const {
        const std::size_t D = dims();
        const auto n = static_cast<Eigen::Index>(count);
        std::vector<Cache> caches(layers_.size());
        Matrix X, Y;
        standardize(rows, count, X);
        Eigen::VectorXd logdet = Eigen::VectorXd::Zero(n);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            layer_forward(layers_[l], X, Y, logdet, grad.empty() ? nullptr : &caches[l]);
            X.swap(Y);
        }
        double total = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) total += -(base_log_prob(X.col(j)) + logdet[j]) + log_std_sum_;
        const double inv = 1.0 / static_cast<double>(count);
        if (!grad.empty()) {
            std::fill(grad.begin(), grad.end(), 0.0);
            Matrix G = X * inv;  // d(mean NLL)/dz
            Matrix GX;
            for (std::size_t l = layers_.size(); l-- > 0;) {
                layer_backward(layers_[l], caches[l], G, -inv, GX, grad);
                G.swap(GX);
            }
        }
        (void)D;
        return total * inv;
    }

private:
    struct Cache {
        Matrix input;              // D x n
        std::vector<Matrix> acts;  // hidden activations, then raw outputs
    };

    static double base_log_prob(const Eigen::Ref<const Eigen::VectorXd>& z) {
        constexpr double kHalfLog2Pi = 0.91893853320467274178;
        return -0.5 * z.squaredNorm() - kHalfLog2Pi * static_cast<double>(z.size());
    }

    void standardize(std::span<const double> rows, std::size_t n, Matrix& X) const {
        const std::size_t D = dims();
        X.resize(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t d = 0; d < D; ++d) {
                X(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) = (rows[j * D + d] - mean_[d]) / std_[d];
            }
        }
    }

    auto weights(const Dense& d) const {
        return Eigen::Map<const Matrix>(params_.data() + d.offset, static_cast<Eigen::Index>(d.out),
                                        static_cast<Eigen::Index>(d.in));
    }
    auto bias(const Dense& d) const {
        return Eigen::Map<const Eigen::VectorXd>(params_.data() + d.offset + d.in * d.out,
                                                 static_cast<Eigen::Index>(d.out));
    }

    /// tanh through a vectorised exp; libm's scalar tanh dominated training.
    static void fast_tanh(Matrix& Z) {
        auto a = Z.array();
        a = 1.0 - 2.0 / ((2.0 * a.max(-40.0).min(40.0)).exp() + 1.0);
    }

    /// Conditioner MLP: tanh hidden layers, linear output. Returns the raw
    /// transform parameters (out x n); hidden activations go to `acts`.
    Matrix conditioner(const Layer& layer, const Matrix& X, std::vector<Matrix>* acts) const {
        const auto n = X.cols();
        Matrix A(static_cast<Eigen::Index>(layer.conditioning.size()), n);
        for (std::size_t r = 0; r < layer.conditioning.size(); ++r) {
            A.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(layer.conditioning[r]));
        }
        if (acts) acts->push_back(A);
        for (std::size_t k = 0; k < layer.net.size(); ++k) {
            const Dense& d = layer.net[k];
            Matrix Z = (d.in == 0 ? Matrix::Zero(static_cast<Eigen::Index>(d.out), n) : Matrix(weights(d) * A));
            Z.colwise() += bias(d);
            if (k + 1 < layer.net.size()) fast_tanh(Z);
            A.swap(Z);
            if (acts) acts->push_back(A);
        }
        return A;
    }

    void layer_forward(const Layer& layer, const Matrix& X, Matrix& Y, Eigen::VectorXd& logdet, Cache* cache) const {
        const std::size_t P = arch_.params_per_dim();
        std::vector<Matrix>* acts = cache ? &cache->acts : nullptr;
        if (cache) {
            cache->input = X;
            cache->acts.clear();
        }
        const Matrix raw = conditioner(layer, X, acts);
        Y = X;
        spline::Knots kn;
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            for (std::size_t t = 0; t < layer.transformed.size(); ++t) {
                const auto d = static_cast<Eigen::Index>(layer.transformed[t]);
                std::span<const double> r(raw.data() + j * raw.rows() + static_cast<Eigen::Index>(t * P), P);
                spline::Eval e;
                if (arch_.transform == TransformKind::Spline) {
                    kn.decode(r, arch_.knots, arch_.bound);
                    e = spline::forward(kn, X(d, j));
                } else {
                    e = affine::forward(r, X(d, j));
                }
                Y(d, j) = e.y;
                logdet[j] += e.logdet;
            }
        }
    }

    void layer_inverse(const Layer& layer, const Matrix& Y, Matrix& X) const {
        const std::size_t P = arch_.params_per_dim();
        const Matrix raw = conditioner(layer, Y, nullptr);  // conditioning rows are unchanged
        X = Y;
        spline::Knots kn;
        for (Eigen::Index j = 0; j < Y.cols(); ++j) {
            for (std::size_t t = 0; t < layer.transformed.size(); ++t) {
                const auto d = static_cast<Eigen::Index>(layer.transformed[t]);
                std::span<const double> r(raw.data() + j * raw.rows() + static_cast<Eigen::Index>(t * P), P);
                if (arch_.transform == TransformKind::Spline) {
                    kn.decode(r, arch_.knots, arch_.bound);
                    X(d, j) = spline::inverse(kn, Y(d, j)).y;
                } else {
                    X(d, j) = affine::inverse(r, Y(d, j)).y;
                }
            }
        }
    }

    /// GY: dLoss/dY (D x n). gl: dLoss/dlogdet per sample. Writes dLoss/dX
    /// into GX and accumulates parameter gradients into `grad`.
    void layer_backward(const Layer& layer, const Cache& cache, const Matrix& GY, double gl, Matrix& GX,
                        std::span<double> grad) const {
        const std::size_t P = arch_.params_per_dim();
        const Matrix& X = cache.input;
        const Matrix& raw = cache.acts.back();
        const auto n = X.cols();
        GX = GY;
        Matrix Graw = Matrix::Zero(raw.rows(), n);
        spline::Knots kn;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (std::size_t t = 0; t < layer.transformed.size(); ++t) {
                const auto d = static_cast<Eigen::Index>(layer.transformed[t]);
                const auto off = j * raw.rows() + static_cast<Eigen::Index>(t * P);
                std::span<const double> r(raw.data() + off, P);
                std::span<double> gr(Graw.data() + off, P);
                if (arch_.transform == TransformKind::Spline) {
                    kn.decode(r, arch_.knots, arch_.bound);
                    GX(d, j) = spline::backward(kn, r, X(d, j), GY(d, j), gl, gr);
                } else {
                    GX(d, j) = affine::backward(r, X(d, j), GY(d, j), gl, gr);
                }
            }
        }
        // Back through the MLP; acts[k] is the input of net[k].
        Matrix G = std::move(Graw);
        for (std::size_t k = layer.net.size(); k-- > 0;) {
            const Dense& d = layer.net[k];
            const Matrix& Ain = cache.acts[k];
            Eigen::Map<Matrix> gW(grad.data() + d.offset, static_cast<Eigen::Index>(d.out),
                                  static_cast<Eigen::Index>(d.in));
            Eigen::Map<Eigen::VectorXd> gb(grad.data() + d.offset + d.in * d.out, static_cast<Eigen::Index>(d.out));
            if (d.in > 0) gW.noalias() += G * Ain.transpose();
            gb += G.rowwise().sum();
            if (d.in == 0) break;
            Matrix Gin = weights(d).transpose() * G;
            if (k > 0) {
                G = (Gin.array() * (1.0 - Ain.array().square())).matrix();
            } else {
                for (std::size_t r = 0; r < layer.conditioning.size(); ++r) {
                    GX.row(static_cast<Eigen::Index>(layer.conditioning[r])) += Gin.row(static_cast<Eigen::Index>(r));
                }
            }
        }
    }

    FlowArchitecture arch_;
    std::vector<double> mean_;
    std::vector<double> std_;
    std::vector<Layer> layers_;
    std::vector<double> params_;
    double log_std_sum_ = 0.0;
    std::size_t trained_on_ = 0;
};

/// Trained flow and its per-step minibatch NLL history.
struct FlowFit {
    FlowDensity model;
    std::vector<double> nll_history;
    double final_nll = 0.0;  // mean NLL over the full working set after training
};

/// Mean and (population) standard deviation per dimension.
inline std::pair<std::vector<double>, std::vector<double>> column_moments(const Dataset& data) {
    const std::size_t D = data.dims();
    std::vector<double> mean(D, 0.0), sd(D, 0.0);
    for (std::size_t i = 0; i < data.rows(); ++i) {
        for (std::size_t d = 0; d < D; ++d) mean[d] += data(i, d);
    }
    for (double& m : mean) m /= static_cast<double>(data.rows());
    for (std::size_t i = 0; i < data.rows(); ++i) {
        for (std::size_t d = 0; d < D; ++d) sd[d] += (data(i, d) - mean[d]) * (data(i, d) - mean[d]);
    }
    for (double& s : sd) s = std::sqrt(s / static_cast<double>(data.rows()));
    return {mean, sd};
}

inline double mean_nll(const FlowDensity& model, const Dataset& data) {
    std::vector<double> lp(data.rows());
    model.log_density_batch(data.values(), data.rows(), lp);
    double total = 0.0;
    for (double v : lp) total -= v;
    return total / static_cast<double>(data.rows());
}

/// Maximum-likelihood training with Adam on minibatches drawn with
/// replacement. The batch is capped at M.
inline FlowFit fit_flow(const Dataset& working, const TrainConfig& config) {
    if (working.rows() < 2) throw Error(ErrorCode::InvalidArgument, "flow training needs M >= 2");
    if (config.steps < 1) throw Error(ErrorCode::InvalidArgument, "training needs steps >= 1");
    if (config.batch < 1) throw Error(ErrorCode::InvalidArgument, "training needs batch >= 1");
    auto [mean, sd] = column_moments(working);
    for (double& s : sd) {
        if (s <= 0.0) s = 1.0;  // constant column: leave unscaled
    }
    FlowDensity model(config.architecture(working.dims()), mean, sd);
    model.initialize(config.seed);
    model.set_trained_on(working.rows());

    const std::size_t D = working.dims();
    const std::size_t batch = std::min(config.batch, working.rows());
    auto params = model.parameters();
    std::vector<double> grad(params.size()), m1(params.size(), 0.0), m2(params.size(), 0.0);
    std::vector<double> rows(batch * D);
    std::vector<double> history;
    history.reserve(config.steps);
    constexpr std::uint64_t kBatchTag = rng::tag("flow-batch");
    double b1t = 1.0, b2t = 1.0;
    for (std::size_t step = 0; step < config.steps; ++step) {
        rng::Stream pick(rng::hash(config.seed, kBatchTag, step), kBatchTag);
        for (std::size_t j = 0; j < batch; ++j) {
            const auto i = static_cast<std::size_t>(pick.below(working.rows()));
            auto r = working.row(i);
            std::copy(r.begin(), r.end(), rows.begin() + static_cast<std::ptrdiff_t>(j * D));
        }
        const double loss = model.nll_and_grad(rows, batch, grad);
        if (!std::isfinite(loss)) throw TrainingDiverged(step, "non-finite loss");
        history.push_back(loss);
        const double frac = static_cast<double>(step) / static_cast<double>(config.steps);
        const double lr = config.learning_rate * std::pow(config.final_lr_factor, frac);
        b1t *= config.beta1;
        b2t *= config.beta2;
        for (std::size_t k = 0; k < params.size(); ++k) {
            const double g = grad[k];
            if (!std::isfinite(g)) throw TrainingDiverged(step, "non-finite gradient");
            m1[k] = config.beta1 * m1[k] + (1.0 - config.beta1) * g;
            m2[k] = config.beta2 * m2[k] + (1.0 - config.beta2) * g * g;
            const double mhat = m1[k] / (1.0 - b1t);
            const double vhat = m2[k] / (1.0 - b2t);
            params[k] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
    }
    const double final_nll = mean_nll(model, working);
    if (!std::isfinite(final_nll)) throw TrainingDiverged(config.steps, "non-finite final NLL");
    return FlowFit{std::move(model), std::move(history), final_nll};
}

}  // namespace phasefold

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lcl/blas.hpp"
#include "lcl/error.hpp"
#include "lcl/graph.hpp"
#include "lcl/tensor.hpp"

namespace lcl {

enum class Mode { train, eval };

inline const char* to_string(Mode m) { return m == Mode::train ? "train" : "eval"; }

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kRunningStatsDecay = 0.99;
inline constexpr double kActivationClamp = 1e-7;

/// Per-channel running mean/variance of one batch-norm layer. Empty until
/// recorded (by initialization or by a train-mode pass).
template <class T>
struct RunningStats {
    std::vector<T> mean;
    std::vector<T> var;

    bool initialized() const noexcept { return !mean.empty(); }

    static RunningStats defaults(std::size_t channels) {
        return RunningStats{std::vector<T>(channels, T{0}), std::vector<T>(channels, T{1})};
    }
};

namespace diagnostics {

// Multiplier applied to the gradient produced by sigmoid's backward. Only the
// gradient-check fixture changes it, to prove the checker catches a broken
// backward pass.
inline thread_local double sigmoid_backward_scale = 1.0;

class ScopedBackwardFault {
public:
    explicit ScopedBackwardFault(double scale) : saved_(sigmoid_backward_scale) {
        sigmoid_backward_scale = scale;
    }
    ~ScopedBackwardFault() { sigmoid_backward_scale = saved_; }
    ScopedBackwardFault(const ScopedBackwardFault&) = delete;
    ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

private:
    double saved_;
};

} // namespace diagnostics

namespace detail {

struct ConvGeometry {
    std::size_t batch, channels, height, width;
    std::size_t filters, kernel, stride, pad;
    std::size_t out_h, out_w;

    std::size_t rows() const { return channels * kernel * kernel; }
    std::size_t plane() const { return out_h * out_w; }
    std::size_t cols() const { return batch * plane(); }
};

// col[(c*K + ky)*K + kx][b*P + oy*Wo + ox] = x[b][c][oy*s - pad + ky][ox*s - pad + kx]
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const std::size_t P = g.plane();
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    const T* src = x + (b * g.channels + c) * g.height * g.width;
                    T* dst = row + b * P;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        T* d = dst + oy * g.out_w;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                            std::fill(d, d + g.out_w, T{0});
                            continue;
                        }
                        const T* s = src + static_cast<std::size_t>(iy) * g.width;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                            static_cast<std::ptrdiff_t>(g.pad);
                            d[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                                        ? T{0}
                                        : s[static_cast<std::size_t>(ix)];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
    const std::size_t P = g.plane();
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    T* dst = dx + (b * g.channels + c) * g.height * g.width;
                    const T* src = row + b * P;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                            continue;
                        }
                        T* d = dst + static_cast<std::size_t>(iy) * g.width;
                        const T* s = src + oy * g.out_w;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                            static_cast<std::ptrdiff_t>(g.pad);
                            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
                                d[static_cast<std::size_t>(ix)] += s[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

inline double bce_term(double a, int z) {
    const double ac = std::clamp(a, kActivationClamp, 1.0 - kActivationClamp);
    return -(z * std::log(ac) + (1 - z) * std::log(1.0 - ac));
}

inline void check_labels(std::span<const int> z, std::size_t rows, std::size_t width) {
    if (z.size() != rows * width) {
        throw ShapeError("contrastive_loss: " + std::to_string(z.size()) + " labels for " +
                         std::to_string(rows) + "x" + std::to_string(width) + " activations");
    }
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t positives = 0;
        for (std::size_t i = 0; i < width; ++i) {
            const int v = z[r * width + i];
            if (v != 0 && v != 1) {
                throw ContractError("contrastive_loss: labels must be 0 or 1");
            }
            positives += v == 0;
        }
        if (positives != 1) {
            throw ContractError("contrastive_loss: context " + std::to_string(r) + " has " +
                                std::to_string(positives) + " positive objects, expected exactly 1");
        }
    }
}

} // namespace detail

/// Output extent of a convolution along one axis.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < kernel) {
        throw ShapeError("convolution window larger than padded input");
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

/// Cross-correlation of x[B,C,H,W] with w[F,C,K,K], K in {1,3}.
template <class T>
Var conv2d(Graph<T>& g, Var input, Var weight, std::size_t stride, std::size_t pad) {
    const auto& x = g.value(input);
    const auto& w = g.value(weight);
    expect_rank(x.shape(), 4, "conv2d input");
    expect_rank(w.shape(), 4, "conv2d weight");
    if (w.dim(1) != x.dim(1)) {
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels but weight expects " +
                         std::to_string(w.dim(1)));
    }
    if (w.dim(2) != w.dim(3) || (w.dim(2) != 3 && w.dim(2) != 1)) {
        throw ShapeError("conv2d: kernel must be 3x3 or 1x1, got " + to_string(w.shape()));
    }
    if (stride != 1 && stride != 2) {
        throw ContractError("conv2d: stride must be 1 or 2");
    }
    if (pad > 1) {
        throw ContractError("conv2d: pad must be 0 or 1");
    }

    detail::ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
    geo.out_h = conv_out_extent(geo.height, geo.kernel, stride, pad);
    geo.out_w = conv_out_extent(geo.width, geo.kernel, stride, pad);

    const std::size_t rows = geo.rows();
    const std::size_t ncols = geo.cols();
    const std::size_t P = geo.plane();
    auto col = std::make_shared<std::vector<T>>(rows * ncols);
    detail::im2col(geo, x.data().data(), col->data());

    std::vector<T> out2(geo.filters * ncols);
    blas::gemm(false, false, geo.filters, ncols, rows, T{1}, w.data().data(), col->data(), T{0}, out2.data());

    Tensor<T> out(Shape{geo.batch, geo.filters, geo.out_h, geo.out_w});
    auto o = out.data();
    for (std::size_t f = 0; f < geo.filters; ++f) {
        for (std::size_t b = 0; b < geo.batch; ++b) {
            std::copy_n(out2.data() + f * ncols + b * P, P, o.data() + (b * geo.filters + f) * P);
        }
    }

    return g.record("conv2d", std::move(out), {input, weight},
                    [input, weight, geo, col](Graph<T>& gr, std::span<const T> dy) {
                        const std::size_t rows = geo.rows();
                        const std::size_t ncols = geo.cols();
                        const std::size_t P = geo.plane();
                        std::vector<T> dy2(geo.filters * ncols);
                        for (std::size_t f = 0; f < geo.filters; ++f) {
                            for (std::size_t b = 0; b < geo.batch; ++b) {
                                std::copy_n(dy.data() + (b * geo.filters + f) * P, P,
                                            dy2.data() + f * ncols + b * P);
                            }
                        }
                        if (gr.needs_grad(weight)) {
                            auto dw = gr.grad_buffer(weight);
                            blas::gemm(false, true, geo.filters, rows, ncols, T{1}, dy2.data(), col->data(),
                                       T{1}, dw.data());
                        }
                        if (gr.needs_grad(input)) {
                            const auto& w = gr.value(weight);
                            std::vector<T> dcol(rows * ncols);
                            blas::gemm(true, false, rows, ncols, geo.filters, T{1}, w.data().data(), dy2.data(),
                                       T{0}, dcol.data());
                            detail::col2im_add(geo, dcol.data(), gr.grad_buffer(input).data());
                        }
                    });
}

/// Batch normalization with recorded running statistics (eval mode).
template <class T>
Var batch_norm_eval(Graph<T>& g, Var input, Var gamma, Var beta, const RunningStats<T>& stats) {
    const auto& x = g.value(input);
    if (x.rank() != 4 && x.rank() != 2) {
        throw ShapeError("batch_norm: expected rank 2 or 4 input, got " + to_string(x.shape()));
    }
    const std::size_t B = x.dim(0);
    const std::size_t C = x.dim(1);
    const std::size_t S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    expect_shape(g.shape(gamma), Shape{C}, "batch_norm gamma");
    expect_shape(g.shape(beta), Shape{C}, "batch_norm beta");
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(C);
    const auto xs = x.data();
    const auto gs = g.value(gamma).data();
    const auto bs = g.value(beta).data();
    Tensor<T> out(x.shape());
    auto ys = out.data();

    if (!stats.initialized()) {
        throw ContractError("batch_norm: eval mode requested before any running statistics were recorded");
    }
    if (stats.mean.size() != C || stats.var.size() != C) {
        throw ShapeError("batch_norm: running stats have " + std::to_string(stats.mean.size()) +
                         " channels, input has " + std::to_string(C));
    }
    for (std::size_t c = 0; c < C; ++c) {
        (*inv_std)[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + kBatchNormEps));
    }
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * S;
            const T mu = stats.mean[c];
            const T is = (*inv_std)[c];
            for (std::size_t s = 0; s < S; ++s) {
                const T xh = (xs[off + s] - mu) * is;
                (*xhat)[off + s] = xh;
                ys[off + s] = gs[c] * xh + bs[c];
            }
        }
    }
    return g.record("batch_norm_eval", std::move(out), {input, gamma, beta},
                    [input, gamma, beta, xhat, inv_std, B, C, S](Graph<T>& gr, std::span<const T> dy) {
                        const auto gs = gr.value(gamma).data();
                        const bool need_g = gr.needs_grad(gamma);
                        const bool need_b = gr.needs_grad(beta);
                        const bool need_x = gr.needs_grad(input);
                        std::span<T> dg, db, dx;
                        if (need_g) dg = gr.grad_buffer(gamma);
                        if (need_b) db = gr.grad_buffer(beta);
                        if (need_x) dx = gr.grad_buffer(input);
                        for (std::size_t b = 0; b < B; ++b) {
                            for (std::size_t c = 0; c < C; ++c) {
                                const std::size_t off = (b * C + c) * S;
                                for (std::size_t s = 0; s < S; ++s) {
                                    if (need_g) dg[c] += dy[off + s] * (*xhat)[off + s];
                                    if (need_b) db[c] += dy[off + s];
                                    if (need_x) dx[off + s] += dy[off + s] * gs[c] * (*inv_std)[c];
                                }
                            }
                        }
                    });
}

/// Per-channel batch normalization of x[B,C,H,W] (or x[B,C]).
///
/// Train mode normalizes with the batch statistics over B,H,W (biased
/// variance) and folds them into `stats` as new = 0.99 old + 0.01 batch.
/// Eval mode normalizes with `stats` and requires them to be recorded.
template <class T>
Var batch_norm(Graph<T>& g, Var input, Var gamma, Var beta, RunningStats<T>& stats, Mode mode) {
    const auto& x = g.value(input);
    if (x.rank() != 4 && x.rank() != 2) {
        throw ShapeError("batch_norm: expected rank 2 or 4 input, got " + to_string(x.shape()));
    }
    const std::size_t B = x.dim(0);
    const std::size_t C = x.dim(1);
    const std::size_t S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    expect_shape(g.shape(gamma), Shape{C}, "batch_norm gamma");
    expect_shape(g.shape(beta), Shape{C}, "batch_norm beta");

    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(C);
    const auto xs = x.data();
    const auto gs = g.value(gamma).data();
    const auto bs = g.value(beta).data();
    Tensor<T> out(x.shape());
    auto ys = out.data();
    const double count = static_cast<double>(B * S);

    if (mode == Mode::train) {
        if (!stats.initialized()) {
            stats = RunningStats<T>::defaults(C);
        }
        if (stats.mean.size() != C) {
            throw ShapeError("batch_norm: running stats have " + std::to_string(stats.mean.size()) +
                             " channels, input has " + std::to_string(C));
        }
        for (std::size_t c = 0; c < C; ++c) {
            double sum = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = xs.data() + (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    sum += p[s];
                }
            }
            const double mean = sum / count;
            double sq = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = xs.data() + (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    const double d = p[s] - mean;
                    sq += d * d;
                }
            }
            const double var = sq / count;
            const double istd = 1.0 / std::sqrt(var + kBatchNormEps);
            (*inv_std)[c] = static_cast<T>(istd);
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t off = (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    const T xh = static_cast<T>((xs[off + s] - mean) * istd);
                    (*xhat)[off + s] = xh;
                    ys[off + s] = gs[c] * xh + bs[c];
                }
            }
            stats.mean[c] = static_cast<T>(kRunningStatsDecay * stats.mean[c] + (1.0 - kRunningStatsDecay) * mean);
            stats.var[c] = static_cast<T>(kRunningStatsDecay * stats.var[c] + (1.0 - kRunningStatsDecay) * var);
        }
        return g.record("batch_norm_train", std::move(out), {input, gamma, beta},
                        [input, gamma, beta, xhat, inv_std, B, C, S](Graph<T>& gr, std::span<const T> dy) {
                            const double m = static_cast<double>(B * S);
                            const auto gs = gr.value(gamma).data();
                            std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
                            for (std::size_t b = 0; b < B; ++b) {
                                for (std::size_t c = 0; c < C; ++c) {
                                    const std::size_t off = (b * C + c) * S;
                                    double s1 = 0.0, s2 = 0.0;
                                    for (std::size_t s = 0; s < S; ++s) {
                                        s1 += dy[off + s];
                                        s2 += dy[off + s] * (*xhat)[off + s];
                                    }
                                    sum_dy[c] += s1;
                                    sum_dy_xhat[c] += s2;
                                }
                            }
                            if (gr.needs_grad(gamma)) {
                                auto dg = gr.grad_buffer(gamma);
                                for (std::size_t c = 0; c < C; ++c) dg[c] += static_cast<T>(sum_dy_xhat[c]);
                            }
                            if (gr.needs_grad(beta)) {
                                auto db = gr.grad_buffer(beta);
                                for (std::size_t c = 0; c < C; ++c) db[c] += static_cast<T>(sum_dy[c]);
                            }
                            if (gr.needs_grad(input)) {
                                auto dx = gr.grad_buffer(input);
                                for (std::size_t b = 0; b < B; ++b) {
                                    for (std::size_t c = 0; c < C; ++c) {
                                        const std::size_t off = (b * C + c) * S;
                                        const double k = gs[c] * (*inv_std)[c] / m;
                                        const double mean_dy = sum_dy[c];
                                        const double mean_dyx = sum_dy_xhat[c];
                                        for (std::size_t s = 0; s < S; ++s) {
                                            dx[off + s] += static_cast<T>(
                                                k * (m * dy[off + s] - mean_dy - (*xhat)[off + s] * mean_dyx));
                                        }
                                    }
                                }
                            }
                        });
    }

    return batch_norm_eval(g, input, gamma, beta, stats);
}

/// max(0, x); the subgradient at exactly 0 is 0.
template <class T>
Var relu(Graph<T>& g, Var input) {
    const auto& x = g.value(input);
    Tensor<T> out(x.shape());
    auto xs = x.data();
    auto ys = out.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ys[i] = xs[i] > T{0} ? xs[i] : T{0};
    }
    return g.record("relu", std::move(out), {input}, [input](Graph<T>& gr, std::span<const T> dy) {
        auto xs = gr.value(input).data();
        auto dx = gr.grad_buffer(input);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (xs[i] > T{0}) {
                dx[i] += dy[i];
            }
        }
    });
}

template <class T>
T stable_sigmoid(T x) {
    if (x >= T{0}) {
        return T{1} / (T{1} + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <class T>
Var sigmoid(Graph<T>& g, Var input) {
    const auto& x = g.value(input);
    Tensor<T> out(x.shape());
    auto xs = x.data();
    auto ys = out.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ys[i] = stable_sigmoid(xs[i]);
    }
    auto y = std::make_shared<std::vector<T>>(out.storage());
    return g.record("sigmoid", std::move(out), {input}, [input, y](Graph<T>& gr, std::span<const T> dy) {
        auto dx = gr.grad_buffer(input);
        const T scale = static_cast<T>(diagnostics::sigmoid_backward_scale);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const T s = (*y)[i];
            dx[i] += scale * dy[i] * s * (T{1} - s);
        }
    });
}

/// x[B,D] * w[D,M] + b[M].
template <class T>
Var dense(Graph<T>& g, Var input, Var weight, Var bias) {
    const auto& x = g.value(input);
    const auto& w = g.value(weight);
    expect_rank(x.shape(), 2, "dense input");
    expect_rank(w.shape(), 2, "dense weight");
    const std::size_t B = x.dim(0), D = x.dim(1), M = w.dim(1);
    if (w.dim(0) != D) {
        throw ShapeError("dense: input width " + std::to_string(D) + " does not match weight rows " +
                         std::to_string(w.dim(0)));
    }
    expect_shape(g.shape(bias), Shape{M}, "dense bias");
    Tensor<T> out(Shape{B, M});
    auto ys = out.data();
    const auto bs = g.value(bias).data();
    for (std::size_t r = 0; r < B; ++r) {
        std::copy(bs.begin(), bs.end(), ys.begin() + static_cast<std::ptrdiff_t>(r * M));
    }
    blas::gemm(false, false, B, M, D, T{1}, x.data().data(), w.data().data(), T{1}, ys.data());
    return g.record("dense", std::move(out), {input, weight, bias},
                    [input, weight, bias, B, D, M](Graph<T>& gr, std::span<const T> dy) {
                        if (gr.needs_grad(weight)) {
                            blas::gemm(true, false, D, M, B, T{1}, gr.value(input).data().data(), dy.data(), T{1},
                                       gr.grad_buffer(weight).data());
                        }
                        if (gr.needs_grad(bias)) {
                            auto db = gr.grad_buffer(bias);
                            for (std::size_t r = 0; r < B; ++r) {
                                for (std::size_t m = 0; m < M; ++m) {
                                    db[m] += dy[r * M + m];
                                }
                            }
                        }
                        if (gr.needs_grad(input)) {
                            blas::gemm(false, true, B, D, M, T{1}, dy.data(), gr.value(weight).data().data(), T{1},
                                       gr.grad_buffer(input).data());
                        }
                    });
}

/// x[B,C,H,W] -> [B,C], mean over the spatial extents.
template <class T>
Var global_avg_pool(Graph<T>& g, Var input) {
    const auto& x = g.value(input);
    expect_rank(x.shape(), 4, "global_avg_pool input");
    const std::size_t BC = x.dim(0) * x.dim(1);
    const std::size_t S = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{x.dim(0), x.dim(1)});
    auto xs = x.data();
    for (std::size_t i = 0; i < BC; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < S; ++j) {
            s += xs[i * S + j];
        }
        out[i] = static_cast<T>(s / static_cast<double>(S));
    }
    return g.record("global_avg_pool", std::move(out), {input}, [input, BC, S](Graph<T>& gr, std::span<const T> dy) {
        auto dx = gr.grad_buffer(input);
        const T inv = T{1} / static_cast<T>(S);
        for (std::size_t i = 0; i < BC; ++i) {
            const T v = dy[i] * inv;
            for (std::size_t j = 0; j < S; ++j) {
                dx[i * S + j] += v;
            }
        }
    });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
    const auto& x = g.value(a);
    const auto& y = g.value(b);
    expect_shape(y.shape(), x.shape(), "add");
    Tensor<T> out(x.shape());
    auto xs = x.data();
    auto ys = y.data();
    auto os = out.data();
    for (std::size_t i = 0; i < os.size(); ++i) {
        os[i] = xs[i] + ys[i];
    }
    return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& gr, std::span<const T> dy) {
        for (Var v : {a, b}) {
            if (gr.needs_grad(v)) {
                auto d = gr.grad_buffer(v);
                for (std::size_t i = 0; i < d.size(); ++i) {
                    d[i] += dy[i];
                }
            }
        }
    });
}

/// Elementwise product of equally shaped tensors.
template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
    const auto& x = g.value(a);
    const auto& y = g.value(b);
    expect_shape(y.shape(), x.shape(), "mul");
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return g.record("mul", std::move(out), {a, b}, [a, b](Graph<T>& gr, std::span<const T> dy) {
        const auto xs = gr.value(a).data();
        const auto ys = gr.value(b).data();
        if (gr.needs_grad(a)) {
            auto d = gr.grad_buffer(a);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * ys[i];
        }
        if (gr.needs_grad(b)) {
            auto d = gr.grad_buffer(b);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * xs[i];
        }
    });
}

/// Sum of all elements, as a [1] tensor.
template <class T>
Var sum(Graph<T>& g, Var input) {
    const auto xs = g.value(input).data();
    double s = 0.0;
    for (T v : xs) {
        s += v;
    }
    return g.record("sum", Tensor<T>::scalar(static_cast<T>(s)), {input},
                    [input](Graph<T>& gr, std::span<const T> dy) {
                        auto d = gr.grad_buffer(input);
                        for (auto& v : d) v += dy[0];
                    });
}

template <class T>
Var reshape(Graph<T>& g, Var input, Shape shape) {
    auto out = g.value(input).reshaped(std::move(shape));
    return g.record("reshape", std::move(out), {input}, [input](Graph<T>& gr, std::span<const T> dy) {
        auto d = gr.grad_buffer(input);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    });
}

/// Mean binary cross-entropy of a[N,L] against labels z (row-major N*L,
/// exactly one 0 per row). Activations are clamped to [1e-7, 1-1e-7]; the
/// gradient is zero where the clamp is active.
template <class T>
Var contrastive_loss(Graph<T>& g, Var activations, std::span<const int> labels) {
    const auto& a = g.value(activations);
    expect_rank(a.shape(), 2, "contrastive_loss activations");
    const std::size_t N = a.dim(0), L = a.dim(1);
    detail::check_labels(labels, N, L);
    std::vector<int> z(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < N * L; ++i) {
        total += detail::bce_term(a[i], z[i]);
    }
    const double scale = 1.0 / static_cast<double>(N * L);
    return g.record("contrastive_loss", Tensor<T>::scalar(static_cast<T>(total * scale)), {activations},
                    [activations, z = std::move(z), scale](Graph<T>& gr, std::span<const T> dy) {
                        const auto as = gr.value(activations).data();
                        auto da = gr.grad_buffer(activations);
                        for (std::size_t i = 0; i < da.size(); ++i) {
                            const double v = as[i];
                            if (v < kActivationClamp || v > 1.0 - kActivationClamp) {
                                continue;
                            }
                            const double d = z[i] ? -1.0 / v : 1.0 / (1.0 - v);
                            da[i] += static_cast<T>(dy[0] * scale * d);
                        }
                    });
}

} // namespace lcl

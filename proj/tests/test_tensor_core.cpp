#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "lcl/blas.hpp"
#include "lcl/grad_check.hpp"
#include "lcl/ops.hpp"
#include "lcl/rng.hpp"

using namespace lcl;

namespace {

Tensor<double> random_tensor(Shape shape, RngStream& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) {
        v = scale * rng.normal();
    }
    return t;
}

// Projects an op output to a scalar with fixed random weights so that every
// output coordinate carries a distinct upstream gradient.
Var project(Graph<double>& g, Var y, const Tensor<double>& weights) {
    return sum(g, mul(g, y, g.constant(weights)));
}

} // namespace

TEST(Tensor, ShapeInvariants) {
    Tensor<float> t(Shape{2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
    EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
    EXPECT_THROW(Tensor<float>(Shape{}), ShapeError);
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
    EXPECT_THROW(t.reshaped(Shape{5, 5}), ShapeError);
    EXPECT_FALSE(t.has_grad());
    EXPECT_EQ(t.grad().size(), 24u);
}

TEST(Conv2d, AllOnesPadded) {
    Graph<double> g;
    auto x = g.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
    auto w = g.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
    const auto& y = g.value(conv2d(g, x, w, 1, 1));
    ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
              (std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, ZeroKernel) {
    RngStream rng(3);
    Graph<double> g;
    auto x = g.constant(random_tensor(Shape{2, 3, 5, 5}, rng));
    auto w = g.constant(Tensor<double>(Shape{4, 3, 3, 3}, 0.0));
    for (double v : g.value(conv2d(g, x, w, 1, 1)).data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Conv2d, StrideTwo) {
    Graph<double> g;
    auto x = g.constant(Tensor<double>(Shape{1, 1, 4, 4}, 1.0));
    auto w = g.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
    const auto& y = g.value(conv2d(g, x, w, 2, 1));
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{4, 6, 6, 9}));
}

TEST(Conv2d, ChannelMismatch) {
    Graph<double> g;
    auto x = g.constant(Tensor<double>(Shape{1, 2, 4, 4}));
    auto w = g.constant(Tensor<double>(Shape{1, 3, 3, 3}));
    EXPECT_THROW(conv2d(g, x, w, 1, 1), ShapeError);
}

TEST(Conv2d, OutputExtentGrid) {
    for (std::size_t h = 3; h <= 9; ++h) {
        for (std::size_t w = 3; w <= 9; ++w) {
            for (std::size_t stride : {1u, 2u}) {
                for (std::size_t pad : {0u, 1u}) {
                    Graph<double> g;
                    auto x = g.constant(Tensor<double>(Shape{1, 1, h, w}, 1.0));
                    auto k = g.constant(Tensor<double>(Shape{2, 1, 3, 3}, 1.0));
                    const auto& y = g.value(conv2d(g, x, k, stride, pad));
                    EXPECT_EQ(y.dim(2), (h + 2 * pad - 3) / stride + 1);
                    EXPECT_EQ(y.dim(3), (w + 2 * pad - 3) / stride + 1);
                }
            }
        }
    }
}

TEST(Conv2d, MatchesDirectLoop) {
    RngStream rng(11);
    const auto xt = random_tensor(Shape{2, 3, 6, 5}, rng);
    const auto wt = random_tensor(Shape{4, 3, 3, 3}, rng);
    Graph<double> g;
    const auto& y = g.value(conv2d(g, g.constant(xt), g.constant(wt), 2, 1));
    const std::size_t Ho = y.dim(2), Wo = y.dim(3);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t f = 0; f < 4; ++f)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double s = 0;
                    for (std::size_t c = 0; c < 3; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = static_cast<int>(oy * 2) - 1 + ky;
                                const int ix = static_cast<int>(ox * 2) - 1 + kx;
                                if (iy < 0 || iy >= 6 || ix < 0 || ix >= 5) continue;
                                s += xt[((b * 3 + c) * 6 + iy) * 5 + ix] * wt[((f * 3 + c) * 3 + ky) * 3 + kx];
                            }
                    EXPECT_NEAR(y[((b * 4 + f) * Ho + oy) * Wo + ox], s, 1e-12);
                }
}

TEST(Gemm, AllTransposesMatchNaiveAtModelShapes) {
    // Shapes as they occur in the network's convolutions, large enough to
    // reach the blocked kernels of the backend.
    RngStream rng(21);
    for (auto [m, k, n] : {std::array<std::size_t, 3>{3, 4, 5}, {16, 144, 576}, {64, 288, 2304}, {20, 1280, 7}}) {
        for (bool ta : {false, true}) {
            for (bool tb : {false, true}) {
                std::vector<double> a(m * k), b(k * n), c(m * n), want(m * n);
                for (auto& v : a) v = rng.normal();
                for (auto& v : b) v = rng.normal();
                for (auto& v : c) v = rng.normal();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0;
                        for (std::size_t p = 0; p < k; ++p) {
                            s += (ta ? a[p * m + i] : a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
                        }
                        want[i * n + j] = 0.5 * s + 2.0 * c[i * n + j];
                    }
                }
                std::vector<float> af(a.begin(), a.end()), bf(b.begin(), b.end()), cf(c.begin(), c.end());
                blas::gemm(ta, tb, m, n, k, 0.5, a.data(), b.data(), 2.0, c.data());
                blas::gemm(ta, tb, m, n, k, 0.5f, af.data(), bf.data(), 2.0f, cf.data());
                double worst = 0, worst_f = 0;
                for (std::size_t i = 0; i < m * n; ++i) {
                    worst = std::max(worst, std::abs(c[i] - want[i]));
                    worst_f = std::max(worst_f, std::abs(cf[i] - want[i]) / (1.0 + std::abs(want[i])));
                }
                EXPECT_LT(worst, 1e-10) << m << "x" << k << "x" << n << " ta " << ta << " tb " << tb;
                EXPECT_LT(worst_f, 1e-4) << m << "x" << k << "x" << n << " ta " << ta << " tb " << tb;
            }
        }
    }
}

TEST(Conv2d, BatchedEqualsPerSampleAtModelShapes) {
    RngStream rng(23);
    for (std::size_t C : {16, 32}) {
        for (std::size_t S : {8, 12}) {
            for (std::size_t stride : {1, 2}) {
                const auto xt = random_tensor(Shape{4, C, S, S}, rng);
                const auto wt = random_tensor(Shape{32, C, 3, 3}, rng);
                Graph<double> g;
                const auto y = g.value(conv2d(g, g.constant(xt), g.constant(wt), stride, 1));
                const std::size_t per = C * S * S;
                for (std::size_t b = 0; b < 4; ++b) {
                    Tensor<double> xb(Shape{1, C, S, S});
                    std::copy_n(xt.data().begin() + static_cast<std::ptrdiff_t>(b * per), per, xb.data().begin());
                    Graph<double> g1;
                    const auto yb = g1.value(conv2d(g1, g1.constant(xb), g1.constant(wt), stride, 1));
                    for (std::size_t i = 0; i < yb.size(); ++i) {
                        ASSERT_NEAR(yb[i], y[b * yb.size() + i], 1e-10) << "C " << C << " S " << S;
                    }
                }
            }
        }
    }
}

TEST(BatchNorm, ConstantInputTrain) {
    Graph<double> g;
    RunningStats<double> stats;
    auto x = g.constant(Tensor<double>(Shape{4, 2, 3, 3}, 5.0));
    auto gamma = g.constant(Tensor<double>(Shape{2}, 1.0));
    auto beta = g.constant(Tensor<double>(Shape{2}, 0.0));
    for (double v : g.value(batch_norm(g, x, gamma, beta, stats, Mode::train)).data()) {
        EXPECT_LT(std::abs(v), 1e-3);
    }
}

TEST(BatchNorm, UnitVarianceInput) {
    Graph<double> g;
    RunningStats<double> stats;
    Tensor<double> xt(Shape{2, 1, 1, 2}, std::vector<double>{-1, 1, 1, -1});
    auto x = g.constant(xt);
    auto gamma = g.constant(Tensor<double>(Shape{1}, 1.0));
    auto beta = g.constant(Tensor<double>(Shape{1}, 0.0));
    const auto& y = g.value(batch_norm(g, x, gamma, beta, stats, Mode::train));
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(y[i], xt[i] * expected, 1e-12);
    }
    // Running stats fold in the batch: mean 0, var 1.
    EXPECT_NEAR(stats.mean[0], 0.0, 1e-12);
    EXPECT_NEAR(stats.var[0], 1.0, 1e-12);
}

TEST(BatchNorm, AffineAppliedToNormalized) {
    RngStream rng(5);
    const auto xt = random_tensor(Shape{3, 2, 2, 2}, rng);
    RunningStats<double> s1, s2;
    Graph<double> g;
    auto x = g.constant(xt);
    const auto& plain = g.value(batch_norm(g, x, g.constant(Tensor<double>(Shape{2}, 1.0)),
                                           g.constant(Tensor<double>(Shape{2}, 0.0)), s1, Mode::train));
    const auto& affine = g.value(batch_norm(g, x, g.constant(Tensor<double>(Shape{2}, 2.0)),
                                            g.constant(Tensor<double>(Shape{2}, 3.0)), s2, Mode::train));
    for (std::size_t i = 0; i < plain.size(); ++i) {
        EXPECT_NEAR(affine[i], 2.0 * plain[i] + 3.0, 1e-12);
    }
}

TEST(BatchNorm, TrainOutputIsStandardized) {
    RngStream rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const auto xt = random_tensor(Shape{6, 3, 4, 4}, rng, 3.0);
        RunningStats<double> stats;
        Graph<double> g;
        const auto& y = g.value(batch_norm(g, g.constant(xt), g.constant(Tensor<double>(Shape{3}, 1.0)),
                                           g.constant(Tensor<double>(Shape{3}, 0.0)), stats, Mode::train));
        for (std::size_t c = 0; c < 3; ++c) {
            double sum = 0, sq = 0;
            for (std::size_t b = 0; b < 6; ++b)
                for (std::size_t s = 0; s < 16; ++s) sum += y[(b * 3 + c) * 16 + s];
            const double mean = sum / 96;
            for (std::size_t b = 0; b < 6; ++b)
                for (std::size_t s = 0; s < 16; ++s) sq += std::pow(y[(b * 3 + c) * 16 + s] - mean, 2);
            EXPECT_NEAR(mean, 0.0, 1e-3);
            EXPECT_NEAR(sq / 96, 1.0, 1e-3);
        }
    }
}

TEST(BatchNorm, EvalNeedsRecordedStats) {
    Graph<double> g;
    RunningStats<double> empty;
    auto x = g.constant(Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
    auto gamma = g.constant(Tensor<double>(Shape{1}, 1.0));
    auto beta = g.constant(Tensor<double>(Shape{1}, 0.0));
    EXPECT_THROW(batch_norm(g, x, gamma, beta, empty, Mode::eval), ContractError);
    auto stats = RunningStats<double>::defaults(1);
    stats.mean[0] = 0.5;
    stats.var[0] = 4.0;
    const auto& y = g.value(batch_norm(g, x, gamma, beta, stats, Mode::eval));
    EXPECT_NEAR(y[0], 0.5 / std::sqrt(4.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, RunningStatsUpdateRule) {
    RunningStats<double> stats = RunningStats<double>::defaults(1);
    Graph<double> g;
    Tensor<double> xt(Shape{4, 1}, std::vector<double>{1, 2, 3, 4});
    batch_norm(g, g.constant(xt), g.constant(Tensor<double>(Shape{1}, 1.0)),
               g.constant(Tensor<double>(Shape{1}, 0.0)), stats, Mode::train);
    EXPECT_NEAR(stats.mean[0], 0.01 * 2.5, 1e-12);
    EXPECT_NEAR(stats.var[0], 0.99 + 0.01 * 1.25, 1e-12);
}

TEST(Relu, ForwardAndSubgradient) {
    Graph<double> g;
    Tensor<double> xt(Shape{3}, std::vector<double>{-1, 0, 2});
    xt.set_requires_grad(true);
    auto x = g.parameter(xt);
    auto y = relu(g, x);
    EXPECT_EQ(std::vector<double>(g.value(y).data().begin(), g.value(y).data().end()),
              (std::vector<double>{0, 0, 2}));
    g.backward(sum(g, y));
    EXPECT_EQ(std::vector<double>(xt.grad().begin(), xt.grad().end()), (std::vector<double>{0, 0, 1}));

    Graph<double> g2;
    for (double v : g2.value(relu(g2, g2.constant(Tensor<double>(Shape{4}, -3.0)))).data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Dense, Examples) {
    Graph<double> g;
    auto x = g.constant(Tensor<double>(Shape{1, 2}, std::vector<double>{1, 2}));
    auto eye = g.constant(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
    auto zero_b = g.constant(Tensor<double>(Shape{2}, 0.0));
    auto ones_b = g.constant(Tensor<double>(Shape{2}, 1.0));
    const auto& same = g.value(dense(g, x, eye, zero_b));
    EXPECT_EQ(same[0], 1.0);
    EXPECT_EQ(same[1], 2.0);
    const auto& shifted = g.value(dense(g, x, eye, ones_b));
    EXPECT_EQ(shifted[0], 2.0);
    EXPECT_EQ(shifted[1], 3.0);

    auto xs = g.constant(Tensor<double>(Shape{3, 2}, 7.0));
    auto zero_w = g.constant(Tensor<double>(Shape{2, 2}, 0.0));
    auto b = g.constant(Tensor<double>(Shape{2}, std::vector<double>{4, -1}));
    const auto& rows = g.value(dense(g, xs, zero_w, b));
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(rows[r * 2], 4.0);
        EXPECT_EQ(rows[r * 2 + 1], -1.0);
    }
    EXPECT_THROW(dense(g, x, g.constant(Tensor<double>(Shape{3, 2})), zero_b), ShapeError);
}

TEST(GlobalAvgPool, ForwardAndGradient) {
    Graph<double> g;
    Tensor<double> xt(Shape{1, 2, 2, 2}, std::vector<double>{1, 1, 1, 1, 0, 2, 4, 6});
    xt.set_requires_grad(true);
    auto y = global_avg_pool(g, g.parameter(xt));
    EXPECT_EQ(g.value(y)[0], 1.0);
    EXPECT_EQ(g.value(y)[1], 3.0);
    g.backward(sum(g, y));
    for (double v : xt.grad()) {
        EXPECT_EQ(v, 0.25);
    }
}

TEST(Sigmoid, ValuesAndDerivative) {
    Graph<double> g;
    Tensor<double> xt(Shape{5}, std::vector<double>{0, 3, -3, 700, -700});
    xt.set_requires_grad(true);
    auto y = sigmoid(g, g.parameter(xt));
    const auto& v = g.value(y);
    EXPECT_EQ(v[0], 0.5);
    EXPECT_NEAR(v[1] + v[2], 1.0, 1e-15);
    EXPECT_TRUE(std::isfinite(v[3]) && std::isfinite(v[4]));
    EXPECT_EQ(v[3], 1.0);
    EXPECT_GE(v[4], 0.0);
    g.backward(sum(g, y));
    EXPECT_EQ(xt.grad()[0], 0.25);
}

TEST(Backward, SquareAndSigmoid) {
    {
        Graph<double> g;
        Tensor<double> xt = Tensor<double>::scalar(3.0);
        xt.set_requires_grad(true);
        auto x = g.parameter(xt);
        g.backward(mul(g, x, x));
        EXPECT_EQ(xt.grad()[0], 6.0);
    }
    {
        Graph<double> g;
        Tensor<double> xt = Tensor<double>::scalar(0.0);
        xt.set_requires_grad(true);
        g.backward(sigmoid(g, g.parameter(xt)));
        EXPECT_EQ(xt.grad()[0], 0.25);
    }
}

TEST(Backward, RejectsNonScalarLoss) {
    Graph<double> g;
    Tensor<double> xt(Shape{2}, 1.0);
    xt.set_requires_grad(true);
    auto y = relu(g, g.parameter(xt));
    EXPECT_THROW(g.backward(y), ContractError);
}

TEST(Backward, TapeIsTopological) {
    RngStream rng(1);
    Graph<double> g;
    Tensor<double> w = random_tensor(Shape{2, 1, 3, 3}, rng);
    auto x = g.constant(random_tensor(Shape{1, 1, 4, 4}, rng));
    auto y = sum(g, relu(g, conv2d(g, x, g.parameter(w), 1, 1)));
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (auto in : g.inputs(Var{i})) {
            EXPECT_LT(in, i);
        }
    }
    EXPECT_EQ(g.op_name(y), "sum");
}

TEST(GradCheck, QuadraticBowl) {
    RngStream rng(2);
    Tensor<double> x = random_tensor(Shape{6}, rng);
    auto result = grad_check([&](Graph<double>& g) {
        auto v = g.parameter(x);
        return sum(g, mul(g, v, v));
    }, {{"x", &x}});
    EXPECT_LT(result.max_rel_error, 1e-10);
}

TEST(GradCheck, DenseSigmoidStack) {
    RngStream rng(4);
    Tensor<double> x = random_tensor(Shape{3, 5}, rng);
    Tensor<double> w = random_tensor(Shape{5, 4}, rng, 0.5);
    Tensor<double> b = random_tensor(Shape{4}, rng);
    Tensor<double> proj = random_tensor(Shape{3, 4}, rng);
    auto result = grad_check([&](Graph<double>& g) {
        auto y = sigmoid(g, dense(g, g.parameter(x), g.parameter(w), g.parameter(b)));
        return project(g, y, proj);
    }, {{"x", &x}, {"w", &w}, {"b", &b}});
    EXPECT_LT(result.max_rel_error, 1e-6) << result.worst_parameter;
}

TEST(GradCheck, ConvBatchNormReluStack) {
    RngStream rng(6);
    Tensor<double> x = random_tensor(Shape{3, 2, 5, 5}, rng);
    Tensor<double> w = random_tensor(Shape{4, 2, 3, 3}, rng, 0.4);
    Tensor<double> gamma = random_tensor(Shape{4}, rng);
    Tensor<double> beta = random_tensor(Shape{4}, rng);
    Tensor<double> proj = random_tensor(Shape{3, 4, 3, 3}, rng);
    auto result = grad_check([&](Graph<double>& g) {
        RunningStats<double> stats;
        auto y = conv2d(g, g.parameter(x), g.parameter(w), 2, 1);
        y = relu(g, batch_norm(g, y, g.parameter(gamma), g.parameter(beta), stats, Mode::train));
        return project(g, y, proj);
    }, {{"x", &x}, {"w", &w}, {"gamma", &gamma}, {"beta", &beta}});
    EXPECT_LT(result.max_rel_error, 1e-4) << result.worst_parameter << "[" << result.worst_index << "]";
}

TEST(GradCheck, EveryOpAgainstFiniteDifferences) {
    RngStream rng(8);
    Tensor<double> x4 = random_tensor(Shape{2, 3, 4, 4}, rng);
    Tensor<double> w3 = random_tensor(Shape{2, 3, 3, 3}, rng);
    Tensor<double> w1 = random_tensor(Shape{2, 3, 1, 1}, rng);
    Tensor<double> gamma = random_tensor(Shape{3}, rng);
    Tensor<double> beta = random_tensor(Shape{3}, rng);
    auto stats = RunningStats<double>::defaults(3);
    stats.mean = {0.1, -0.2, 0.3};
    stats.var = {1.5, 0.7, 2.0};

    auto check = [&](auto&& f, std::vector<std::pair<std::string, Tensor<double>*>> params, const Shape& out) {
        Tensor<double> proj = random_tensor(out, rng);
        auto r = grad_check([&](Graph<double>& g) { return project(g, f(g), proj); }, params);
        EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter;
    };
    check([&](Graph<double>& g) { return conv2d(g, g.parameter(x4), g.parameter(w3), 1, 1); },
          {{"x", &x4}, {"w", &w3}}, Shape{2, 2, 4, 4});
    check([&](Graph<double>& g) { return conv2d(g, g.parameter(x4), g.parameter(w3), 2, 0); },
          {{"x", &x4}, {"w", &w3}}, Shape{2, 2, 1, 1});
    check([&](Graph<double>& g) { return conv2d(g, g.parameter(x4), g.parameter(w1), 2, 0); },
          {{"x", &x4}, {"w", &w1}}, Shape{2, 2, 2, 2});
    check([&](Graph<double>& g) {
        return batch_norm_eval(g, g.parameter(x4), g.parameter(gamma), g.parameter(beta), stats);
    }, {{"x", &x4}, {"gamma", &gamma}, {"beta", &beta}}, Shape{2, 3, 4, 4});
    check([&](Graph<double>& g) { return global_avg_pool(g, g.parameter(x4)); }, {{"x", &x4}}, Shape{2, 3});
    check([&](Graph<double>& g) { return relu(g, g.parameter(x4)); }, {{"x", &x4}}, Shape{2, 3, 4, 4});
    check([&](Graph<double>& g) { return sigmoid(g, g.parameter(x4)); }, {{"x", &x4}}, Shape{2, 3, 4, 4});
    check([&](Graph<double>& g) { return add(g, g.parameter(x4), relu(g, g.parameter(x4))); }, {{"x", &x4}},
          Shape{2, 3, 4, 4});
    check([&](Graph<double>& g) { return reshape(g, g.parameter(x4), Shape{6, 16}); }, {{"x", &x4}}, Shape{6, 16});
}

TEST(GradCheck, DetectsCorruptedBackward) {
    RngStream rng(4);
    Tensor<double> x = random_tensor(Shape{2, 3}, rng);
    diagnostics::ScopedBackwardFault fault(1.5);
    auto result = grad_check([&](Graph<double>& g) { return sum(g, sigmoid(g, g.parameter(x))); }, {{"x", &x}});
    EXPECT_GT(result.max_rel_error, 0.1);
}

TEST(Determinism, IdenticalInputsBitwiseIdentical) {
    RngStream rng(12);
    const auto xt = random_tensor(Shape{4, 2, 8, 8}, rng).cast<float>();
    const auto wt = random_tensor(Shape{8, 2, 3, 3}, rng).cast<float>();
    auto run = [&] {
        Graph<float> g;
        RunningStats<float> stats;
        auto y = conv2d(g, g.constant(xt), g.constant(wt), 1, 1);
        y = batch_norm(g, y, g.constant(Tensor<float>(Shape{8}, 1.0f)), g.constant(Tensor<float>(Shape{8}, 0.0f)),
                       stats, Mode::train);
        return g.value(global_avg_pool(g, relu(g, y)));
    };
    EXPECT_TRUE(run() == run());
}

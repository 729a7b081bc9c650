// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "layerdiff/autodiff.hpp"
#include "layerdiff/error.hpp"
#include "layerdiff/rng.hpp"
#include "test_util.hpp"

namespace layerdiff {
namespace {

TEST(Matmul, IdentityAndHandCase) {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    EXPECT_EQ(matmul(constant(a), constant(Tensor::identity(2))).value(), a);
    EXPECT_EQ(matmul(constant(a), constant(Tensor::matrix({{5, 6}, {7, 8}}))).value(),
              Tensor::matrix({{19, 22}, {43, 50}}));
    EXPECT_EQ(matmul(constant(a), constant(Tensor({2, 2}))).value(), Tensor({2, 2}));
}

TEST(Matmul, RejectsInnerMismatch) {
    EXPECT_THROW(matmul(constant(Tensor({2, 3})), constant(Tensor({2, 3}))), ShapeError);
}

TEST(Conv2d, IdentityKernelConstantImageAndZeroKernel) {
    DRng rng(1);
    const Tensor x = randn({1, 5, 5}, rng);
    EXPECT_EQ(conv2d(constant(x), constant(Tensor({1, 1, 1, 1}, 1.0)), 1, 0).value(), x);

    const double c = 0.7;
    const Tensor flat({1, 6, 6}, c);
    const Tensor out = conv2d(constant(flat), constant(Tensor({1, 1, 3, 3}, 1.0)), 1, 0).value();
    ASSERT_EQ(out.shape(), (Shape{1, 4, 4}));
    for (double v : out.data()) EXPECT_NEAR(v, 9 * c, 1e-12);

    const Tensor zero = conv2d(constant(x), constant(Tensor({2, 1, 3, 3})), 1, 1).value();
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, MatchesDirectSummation) {
    DRng rng(2);
    const Tensor x = randn({2, 5, 4}, rng), k = randn({3, 2, 3, 3}, rng);
    const Tensor out = conv2d(constant(x), constant(k), 2, 1).value();
    ASSERT_EQ(out.shape(), (Shape{3, 3, 2}));
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t oy = 0; oy < 3; ++oy)
            for (std::size_t ox = 0; ox < 2; ++ox) {
                double want = 0.0;
                for (std::size_t c = 0; c < 2; ++c)
                    for (int dy = 0; dy < 3; ++dy)
                        for (int dx = 0; dx < 3; ++dx) {
                            const int y = static_cast<int>(oy * 2) + dy - 1, xx = static_cast<int>(ox * 2) + dx - 1;
                            if (y < 0 || y >= 5 || xx < 0 || xx >= 4) continue;
                            want += x.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) *
                                    k[((f * 2 + c) * 3 + static_cast<std::size_t>(dy)) * 3 + static_cast<std::size_t>(dx)];
                        }
                EXPECT_NEAR(out.at(f, oy, ox), want, 1e-12);
            }
}

TEST(Softmax, HandValues) {
    const Tensor z = softmax_rows(constant(Tensor({1, 4}))).value();
    for (double v : z.data()) EXPECT_DOUBLE_EQ(v, 0.25);
    const Tensor c = softmax_rows(constant(Tensor({1, 3}, 123.0))).value();
    for (double v : c.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    const Tensor l = softmax_rows(constant(Tensor::matrix({{0.0, std::log(3.0)}}))).value();
    EXPECT_NEAR(l[0], 0.25, 1e-15);
    EXPECT_NEAR(l[1], 0.75, 1e-15);
}

TEST(Rng, DeterministicStatisticalAndSplit) {
    DRng a(42), b(42);
    EXPECT_EQ(randn({7, 3}, a), randn({7, 3}, b));

    DRng rng(7);
    const Tensor s = randn({100000}, rng);
    double mean = 0.0, var = 0.0;
    for (double v : s.data()) mean += v / 1e5;
    for (double v : s.data()) var += (v - mean) * (v - mean) / (1e5 - 1);
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(var, 1.0, 0.03);

    DRng root(9);
    DRng c1 = root.split(1), c2 = root.split(2);
    EXPECT_NE(c1.next_u64(), c2.next_u64());
    // Children do not depend on how far the parent has advanced.
    DRng advanced(9);
    for (int i = 0; i < 10; ++i) advanced.next_u64();
    DRng x = root.split(5), y = advanced.split(5);
    EXPECT_EQ(x.next_u64(), y.next_u64());
}

TEST(Rng, StateRoundTrip) {
    DRng rng(3);
    rng.normal();  // leaves a cached spare
    DRng copy = DRng::from_state(rng.state());
    for (int i = 0; i < 5; ++i) EXPECT_EQ(rng.normal(), copy.normal());
}

TEST(Grad, SimpleRules) {
    DRng rng(4);
    const Var x = parameter(randn({5}, rng));
    const auto g = grad(sum_squares(x), {x});
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(g[0][i], 2.0 * x.value()[i]);

    const Var p = parameter(Tensor({3}, 1.0));
    const Var y = parameter(Tensor({3}, 2.0));
    const auto g2 = grad(sum(y), {p, y}, /*allow_unused=*/true);
    for (double v : g2[0].data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(grad(sum(y), {p, y}), Error);
}

TEST(FiniteDiff, AnalyticChecks) {
    auto square = [](const std::vector<Tensor>& p) { return p[0][0] * p[0][0]; };
    EXPECT_NEAR(finite_diff_grad(square, {Tensor::vector({3.0})})[0][0], 6.0, 1e-8);
    auto flat = [](const std::vector<Tensor>&) { return 4.2; };
    EXPECT_NEAR(finite_diff_grad(flat, {Tensor::vector({1.0})})[0][0], 0.0, 1e-9);
    auto sine = [](const std::vector<Tensor>& p) { return std::sin(p[0][0]); };
    EXPECT_NEAR(finite_diff_grad(sine, {Tensor::vector({0.0})})[0][0], 1.0, 1e-9);
}

// Every differentiable op against central differences on a random point.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
    DRng rng(100 + static_cast<std::uint64_t>(GetParam()));
    std::vector<Tensor> init;
    std::function<Var(const std::vector<Var>&)> build;
    switch (GetParam()) {
        case 0:
            init = {randn({3, 4}, rng), randn({4, 2}, rng)};
            build = [](const auto& v) { return sum_squares(matmul(v[0], v[1])); };
            break;
        case 1:
            init = {randn({3, 4}, rng), randn({5, 4}, rng)};
            build = [](const auto& v) { return sum_squares(softmax_rows(matmul_nt(v[0], v[1]))); };
            break;
        case 2:
            init = {randn({2, 5, 5}, rng), randn({3, 2, 3, 3}, rng), randn({3}, rng)};
            build = [](const auto& v) { return sum_squares(silu(add_channel_bias(conv2d(v[0], v[1], 2, 1), v[2]))); };
            break;
        case 3:
            init = {randn({4, 3, 3}, rng), randn({4}, rng), randn({4}, rng)};
            build = [](const auto& v) { return sum_squares(mul(group_norm(v[0], v[1], v[2], 2), v[0])); };
            break;
        case 4:
            init = {randn({2, 3, 4}, rng)};
            build = [](const auto& v) {
                return sum_squares(add(box_blur3(v[0]), add(forward_diff(v[0], 1), forward_diff(v[0], 2))));
            };
            break;
        case 5:
            init = {randn({2, 2, 3}, rng)};
            build = [](const auto& v) {
                const Var t = to_tokens(upsample_nearest2x(v[0]));
                return sum_squares(from_tokens(concat_cols({slice_cols(t, 0, 1), transpose(transpose(t))}), 4, 6));
            };
            break;
        default:
            init = {randn({3, 2}, rng), randn({2}, rng), Tensor::scalar(0.7)};
            build = [](const auto& v) {
                return sum_squares(mul_scalar(add_row_bias(concat_rows({v[0], v[0]}), v[1]), v[2]));
            };
    }
    std::vector<Var> vars;
    for (const auto& t : init) vars.push_back(parameter(t));
    const auto analytic = grad(build(vars), vars);
    auto f = [&](const std::vector<Tensor>& p) {
        NoGradGuard guard;
        std::vector<Var> c;
        for (const auto& t : p) c.push_back(constant(t));
        return build(c).item();
    };
    const auto numeric = finite_diff_grad(f, init, 1e-5);
    for (std::size_t i = 0; i < init.size(); ++i)
        for (std::size_t j = 0; j < init[i].size(); ++j)
            EXPECT_NEAR(analytic[i][j], numeric[i][j], 1e-6 * std::max(1.0, std::abs(numeric[i][j])))
                << "input " << i << " element " << j;
}

INSTANTIATE_TEST_SUITE_P(Ops, OpGradient, ::testing::Range(0, 7));

TEST(Autodiff, NoGradGuardStopsRecording) {
    const Var x = parameter(Tensor({2}, 1.0));
    {
        NoGradGuard guard;
        EXPECT_FALSE(grad_recording_enabled());
        EXPECT_FALSE(sum_squares(x).requires_grad());
    }
    EXPECT_TRUE(grad_recording_enabled());
    EXPECT_TRUE(sum_squares(x).requires_grad());
}

TEST(Autodiff, NonFiniteResultsThrow) {
    const Var x = constant(Tensor::vector({1e308}));
    EXPECT_THROW(scale(x, 10.0), NumericError);
}

}  // namespace
}  // namespace layerdiff

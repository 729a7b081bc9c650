// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "layerdiff/attention.hpp"
#include "layerdiff/error.hpp"
#include "layerdiff/lora.hpp"
#include "test_util.hpp"

namespace layerdiff {
namespace {

LoraAdapter hand_adapter(double alpha) {
    LoraAdapter a;
    a.a = parameter(Tensor::matrix({{1, 2}}));
    a.b = parameter(Tensor::matrix({{3}, {4}}));
    a.alpha = parameter(Tensor::scalar(alpha));
    return a;
}

TEST(Lora, HandDelta) {
    EXPECT_EQ(lora_delta(hand_adapter(2.0)).value(), Tensor::matrix({{6, 12}, {8, 16}}));
    const Tensor off = lora_delta(hand_adapter(0.0)).value();
    for (double v : off.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lora, FreshAdapterIsZeroDeltaWithDefaults) {
    DRng rng(1);
    const LoraAdapter a = init_adapter(24, 16, rng);
    EXPECT_EQ(a.rank(), 16u);
    EXPECT_EQ(a.alpha.item(), 16.0);
    EXPECT_EQ(a.d_in(), 24u);
    EXPECT_EQ(a.d_out(), 16u);
    const Tensor delta = lora_delta(a).value();
    for (double v : delta.data()) EXPECT_EQ(v, 0.0);

    const Tensor w = randn({16, 24}, rng);
    const Var x = constant(randn({5, 24}, rng));
    EXPECT_EQ(apply_projection(x, constant(w), &a).value(), apply_projection(x, constant(w), nullptr).value());
}

TEST(Lora, RankBoundsAreEnforced) {
    DRng rng(2);
    EXPECT_THROW(init_adapter(8, 8, rng, LoraConfig{0, 1.0, 0.02}), ConfigError);
    EXPECT_THROW(init_adapter(8, 4, rng, LoraConfig{5, 1.0, 0.02}), ConfigError);
    EXPECT_NO_THROW(init_adapter(8, 4, rng, LoraConfig{4, 1.0, 0.02}));
}

TEST(Lora, RouterKeepsBranchesApartAndClampsAlpha) {
    DRng rng(3);
    BranchRouter router;
    router.add_slot("mid.self.q", 8, 8, Projection::q, rng, LoraConfig{4, 2.0, 0.02});
    EXPECT_EQ(router.slot_count(), 1u);
    EXPECT_NE(router.adapter(Branch::fg, "mid.self.q").a.node(), router.adapter(Branch::bg, "mid.self.q").a.node());

    router.set_frozen(Branch::fg, true);
    EXPECT_TRUE(router.frozen(Branch::fg));
    EXPECT_FALSE(router.frozen(Branch::bg));

    router.adapter(Branch::fg, "mid.self.q").alpha.mutable_value()[0] = -3.0;
    router.adapter(Branch::bg, "mid.self.q").alpha.mutable_value()[0] = 100.0;
    router.clamp_alpha();
    EXPECT_EQ(router.adapter(Branch::fg, "mid.self.q").alpha.item(), LoraConfig::kAlphaMin);
    EXPECT_EQ(router.adapter(Branch::bg, "mid.self.q").alpha.item(), LoraConfig::kAlphaMax);

    EXPECT_EQ(parse_branch("foreground"), Branch::fg);
    EXPECT_EQ(parse_branch("bg"), Branch::bg);
    EXPECT_THROW(parse_branch("middle"), Error);
}

TEST(Lora, GradientsOfDelta) {
    DRng rng(4);
    LoraAdapter a = init_adapter(3, 2, rng, LoraConfig{2, 1.5, 0.5});
    a.b.mutable_value() = randn({2, 2}, rng);
    const Tensor w = randn({2, 3}, rng);
    const Tensor x = randn({4, 3}, rng);
    const auto g = grad(sum_squares(apply_projection(constant(x), constant(w), &a)), {a.a, a.b, a.alpha});
    auto f = [&](const std::vector<Tensor>& p) {
        LoraAdapter c;
        c.a = constant(p[0]);
        c.b = constant(p[1]);
        c.alpha = constant(p[2]);
        return sum_squares(apply_projection(constant(x), constant(w), &c)).item();
    };
    const auto n = finite_diff_grad(f, {a.a.value(), a.b.value(), a.alpha.value()});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < g[i].size(); ++j) EXPECT_NEAR(g[i][j], n[i][j], 1e-6);
}

TEST(Attention, LogitsHandCase) {
    const Var q = constant(Tensor::matrix({{1}}));
    const Var k = constant(Tensor::matrix({{2}}));
    EXPECT_EQ(attention_logits(q, k).value(), Tensor::matrix({{2}}));
}

TEST(Attention, BiasLayout) {
    SpatialBias b = SpatialBias::zeros();
    b.alpha.mutable_value()[2] = 0.5;  // query foreground, key background
    EXPECT_EQ(b.at(1, 0), 0.5);
    const TokenMask m{{1, 0}};
    EXPECT_EQ(sma_bias(m, b).value(), Tensor::matrix({{0, 0.5}, {0, 0}}));
    EXPECT_THROW(sma_bias(TokenMask{{0, 2}}, b), Error);
}

TEST(Attention, ZeroBiasIsVanilla) {
    DRng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Var q = constant(randn({6, 4}, rng)), k = constant(randn({6, 4}, rng)), v = constant(randn({6, 3}, rng));
        TokenMask m;
        for (int i = 0; i < 6; ++i) m.labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
        EXPECT_EQ(sma_attention(q, k, v, m, SpatialBias::zeros()).value(), vanilla_attention(q, k, v).value());
    }
}

TEST(Attention, LargeNegativeBiasMatchesMaskedSoftmax) {
    DRng rng(6);
    const Tensor q = randn({4, 2}, rng), k = randn({4, 2}, rng), v = randn({4, 2}, rng);
    const TokenMask m{{0, 1, 0, 1}};
    SpatialBias b = SpatialBias::zeros();
    b.alpha.mutable_value()[1] = -1e9;  // background queries cannot see foreground keys
    const Tensor out = sma_attention(constant(q), constant(k), constant(v), m, b).value();
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> w(4, 0.0);
        double total = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            if (m.labels[i] == 0 && m.labels[j] == 1) continue;
            const double s = (q.at(i, 0) * k.at(j, 0) + q.at(i, 1) * k.at(j, 1)) / std::sqrt(2.0);
            w[j] = std::exp(s);
            total += w[j];
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double want = 0.0;
            for (std::size_t j = 0; j < 4; ++j) want += w[j] / total * v.at(j, c);
            EXPECT_NEAR(out.at(i, c), want, 1e-12);
        }
    }
}

TEST(Attention, BiasGradients) {
    DRng rng(7);
    const Tensor q = randn({5, 3}, rng), k = randn({5, 3}, rng), v = randn({5, 2}, rng);
    const TokenMask m{{1, 0, 0, 1, 1}};
    SpatialBias b{parameter(randn({2, 2}, rng))};
    const auto g = grad(sum_squares(sma_attention(constant(q), constant(k), constant(v), m, b)), {b.alpha});
    auto f = [&](const std::vector<Tensor>& p) {
        return sum_squares(sma_attention(constant(q), constant(k), constant(v), m, SpatialBias{constant(p[0])})).item();
    };
    const auto n = finite_diff_grad(f, {b.alpha.value()});
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g[0][j], n[0][j], 1e-7);
}

TEST(Attention, TokenMaskPooling) {
    Tensor mask({4, 4});
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) mask.at(y, x) = 1.0;
    const TokenMask m = latent_token_mask(mask, 2, 2);
    EXPECT_EQ(m.labels, (std::vector<std::uint8_t>{1, 0, 0, 0}));
    EXPECT_EQ(m.count_foreground(), 1u);

    // A cell at exactly half coverage counts as foreground.
    Tensor half({2, 2});
    half.at(0, 0) = half.at(0, 1) = 1.0;
    EXPECT_EQ(latent_token_mask(half, 1, 1).labels, (std::vector<std::uint8_t>{1}));
    EXPECT_THROW(latent_token_mask(Tensor({5, 4}), 2, 2), Error);
}

}  // namespace
}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/attention.hpp"

#include <algorithm>
#include <cmath>

#include "layerdiff/error.hpp"
#include "layerdiff/faults.hpp"

namespace layerdiff {

SpatialBias SpatialBias::zeros() {
    Tensor init({2, 2});
    if (active_fault() == Fault::nonzero_sma_init) init[1] = 0.05;
    return SpatialBias{parameter(std::move(init))};
}

std::size_t TokenMask::count_foreground() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

Var attention_logits(const Var& q, const Var& k) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || q.shape()[1] != k.shape()[1]) {
        throw ShapeError("attention_logits: Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) +
                         " must share d_k");
    }
    const double d_k = static_cast<double>(q.shape()[1]);
    return scale(matmul_nt(q, k), 1.0 / std::sqrt(d_k));
}

Var sma_bias(const TokenMask& mask, const SpatialBias& bias) {
    const std::size_t n = mask.size();
    std::vector<std::size_t> index(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t s = mask.labels[i];
        if (s > 1) throw Error("sma_bias: token label must be 0 or 1");
        for (std::size_t j = 0; j < n; ++j) index[i * n + j] = 2 * s + mask.labels[j];
    }
    for (std::uint8_t t : mask.labels)
        if (t > 1) throw Error("sma_bias: token label must be 0 or 1");
    return gather(bias.alpha, std::move(index), {n, n});
}

Var sma_attention(const Var& q, const Var& k, const Var& v, const TokenMask& mask, const SpatialBias& bias) {
    Var logits = attention_logits(q, k);
    if (mask.size() != logits.shape()[0] || mask.size() != logits.shape()[1]) {
        throw ShapeError("sma_attention: token mask length " + std::to_string(mask.size()) +
                         " does not match logits " + shape_str(logits.shape()));
    }
    return matmul(softmax_rows(add(logits, sma_bias(mask, bias))), v);
}

Var vanilla_attention(const Var& q, const Var& k, const Var& v) {
    return matmul(softmax_rows(attention_logits(q, k)), v);
}

Tensor downsample_mask(const Tensor& mask_image, std::size_t h, std::size_t w) {
    if (mask_image.rank() != 2) throw ShapeError("downsample_mask: mask must be [H x W]");
    const std::size_t H = mask_image.dim(0), W = mask_image.dim(1);
    if (h == 0 || w == 0 || H % h != 0 || W % w != 0) {
        throw ShapeError("downsample_mask: " + shape_str(mask_image.shape()) + " is not divisible into " +
                         std::to_string(h) + "x" + std::to_string(w) + " cells");
    }
    const std::size_t fy = H / h, fx = W / w;
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t dy = 0; dy < fy; ++dy)
                for (std::size_t dx = 0; dx < fx; ++dx) acc += mask_image.at(y * fy + dy, x * fx + dx);
            out.at(y, x) = acc / static_cast<double>(fy * fx) >= 0.5 ? 1.0 : 0.0;
        }
    return out;
}

TokenMask latent_token_mask(const Tensor& mask_image, std::size_t latent_h, std::size_t latent_w) {
    const Tensor cells = downsample_mask(mask_image, latent_h, latent_w);
    TokenMask mask;
    mask.labels.reserve(cells.size());
    for (double v : cells.data()) mask.labels.push_back(v > 0.0 ? 1 : 0);
    return mask;
}

}  // namespace layerdiff

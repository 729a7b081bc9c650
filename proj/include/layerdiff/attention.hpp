// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "layerdiff/autodiff.hpp"

namespace layerdiff {

/// Learnable additive logit bias alpha[s][t] for query region s and key
/// region t (0 = background token, 1 = foreground token). Starts at zero so
/// the layer begins as plain attention.
struct SpatialBias {
    Var alpha;  // [2 x 2]

    static SpatialBias zeros();
    double at(int s, int t) const { return alpha.value()[static_cast<std::size_t>(2 * s + t)]; }
};

/// Foreground/background label per attention token.
struct TokenMask {
    std::vector<std::uint8_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t count_foreground() const;
};

/// Q K^T / sqrt(d_k).
Var attention_logits(const Var& q, const Var& k);

/// n x n matrix with entry (i, j) = alpha[m_i][m_j]. Throws on labels outside {0, 1}.
Var sma_bias(const TokenMask& mask, const SpatialBias& bias);

/// softmax_rows(Q K^T / sqrt(d_k) + bias) V.
Var sma_attention(const Var& q, const Var& k, const Var& v, const TokenMask& mask, const SpatialBias& bias);

/// softmax_rows(Q K^T / sqrt(d_k)) V.
Var vanilla_attention(const Var& q, const Var& k, const Var& v);

/// Average-pools a pixel mask [H x W] onto a latent_h x latent_w grid and
/// labels a cell foreground when its mean is >= 0.5. H and W must be
/// multiples of the grid extents.
TokenMask latent_token_mask(const Tensor& mask_image, std::size_t latent_h, std::size_t latent_w);

/// The same pooling rule returned as a binary [h x w] tensor.
Tensor downsample_mask(const Tensor& mask_image, std::size_t h, std::size_t w);

}  // namespace layerdiff

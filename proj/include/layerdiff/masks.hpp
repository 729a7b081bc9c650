// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "layerdiff/tensor.hpp"

namespace layerdiff {

/// N binary instance masks [H x W] plus the back-to-front paint order.
struct MaskSet {
    std::vector<Tensor> masks;
    std::vector<std::size_t> depth_order;  // back to front; empty means index order

    std::size_t count() const noexcept { return masks.size(); }
    std::size_t height() const { return masks.at(0).dim(0); }
    std::size_t width() const { return masks.at(0).dim(1); }
    /// depth_order if set, else 0..N-1.
    std::vector<std::size_t> paint_order() const;
    /// Throws unless masks are non-empty, equally shaped, binary, and the
    /// depth order is a permutation.
    void validate() const;
};

bool is_binary(const Tensor& mask);

/// Pixelwise maximum of all masks.
Tensor union_mask(const MaskSet& masks);

/// Square-window (Chebyshev radius) dilation and erosion of a binary
/// [H x W] mask. Out-of-bounds pixels are ignored, so a full mask erodes to
/// itself.
Tensor dilate(const Tensor& mask, std::size_t radius);
Tensor erode(const Tensor& mask, std::size_t radius);
/// dilate(mask, radius) - erode(mask, radius).
Tensor boundary_band(const Tensor& mask, std::size_t radius);

double mask_area(const Tensor& mask);

}  // namespace layerdiff

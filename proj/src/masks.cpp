// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/masks.hpp"

#include <algorithm>
#include <numeric>

#include "layerdiff/error.hpp"

namespace layerdiff {

std::vector<std::size_t> MaskSet::paint_order() const {
    if (!depth_order.empty()) return depth_order;
    std::vector<std::size_t> order(masks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
}

bool is_binary(const Tensor& mask) {
    return std::all_of(mask.data().begin(), mask.data().end(), [](double v) { return v == 0.0 || v == 1.0; });
}

void MaskSet::validate() const {
    if (masks.empty()) throw ShapeError("mask set is empty");
    for (const auto& m : masks) {
        if (m.rank() != 2) throw ShapeError("masks must be [H x W]");
        require_same_shape(m, masks.front(), "mask set");
        if (!is_binary(m)) throw Error("masks must be binary");
    }
    if (!depth_order.empty()) {
        std::vector<std::size_t> sorted = depth_order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i)
            if (sorted[i] != i || sorted.size() != masks.size()) throw Error("depth order is not a permutation");
    }
}

Tensor union_mask(const MaskSet& masks) {
    if (masks.masks.empty()) throw ShapeError("union_mask: at least one mask is required");
    Tensor out = masks.masks.front();
    for (std::size_t k = 1; k < masks.count(); ++k) {
        require_same_shape(out, masks.masks[k], "union_mask");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], masks.masks[k][i]);
    }
    return out;
}

namespace {

Tensor morph(const Tensor& mask, std::size_t radius, bool grow) {
    if (mask.rank() != 2) throw ShapeError("morphology: mask must be [H x W]");
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t y0 = y >= radius ? y - radius : 0, y1 = std::min(h - 1, y + radius);
            const std::size_t x0 = x >= radius ? x - radius : 0, x1 = std::min(w - 1, x + radius);
            double v = grow ? 0.0 : 1.0;
            for (std::size_t yy = y0; yy <= y1; ++yy)
                for (std::size_t xx = x0; xx <= x1; ++xx)
                    v = grow ? std::max(v, mask.at(yy, xx)) : std::min(v, mask.at(yy, xx));
            out.at(y, x) = v;
        }
    return out;
}

}  // namespace

Tensor dilate(const Tensor& mask, std::size_t radius) { return morph(mask, radius, true); }
Tensor erode(const Tensor& mask, std::size_t radius) { return morph(mask, radius, false); }

Tensor boundary_band(const Tensor& mask, std::size_t radius) {
    Tensor band = dilate(mask, radius);
    const Tensor inner = erode(mask, radius);
    for (std::size_t i = 0; i < band.size(); ++i) band[i] -= inner[i];
    return band;
}

double mask_area(const Tensor& mask) { return mask.sum(); }

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "layerdiff/tensor.hpp"

namespace layerdiff {

/// 8-bit PNG I/O. Images are [C x H x W] with values in [0, 1], stored as
/// round(255 v); values that are already multiples of 1/255 round-trip
/// exactly. All readers throw DataError on missing or malformed files.

/// Rounds every value to the nearest multiple of 1/255 after clamping to [0, 1].
Tensor quantize_image(const Tensor& image);

void write_png_rgb(const std::filesystem::path& path, const Tensor& image);
Tensor read_png_rgb(const std::filesystem::path& path);

/// Binary mask [H x W] stored as 0/255 grayscale.
void write_png_mask(const std::filesystem::path& path, const Tensor& mask);
Tensor read_png_mask(const std::filesystem::path& path);

struct IndexedImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> indices;
};

/// Palette-indexed PNG; the palette holds one distinct color per index.
void write_png_indexed(const std::filesystem::path& path, const IndexedImage& image, std::size_t palette_size);
IndexedImage read_png_indexed(const std::filesystem::path& path);

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "layerdiff/error.hpp"

namespace layerdiff {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw DataError(std::string(mode[0] == 'r' ? "cannot read " : "cannot write ") + path.string());
    }
    return f;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    int color_type = 0;
    std::vector<std::uint8_t> bytes;  // row-major, channels interleaved
    std::vector<png_color> palette;
};

// libpng reports errors by longjmp; keep all C++ objects with destructors
// outside the setjmp frames below.
void write_raster(const std::filesystem::path& path, const Raster& r) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng: cannot create info struct");
    }
    const std::size_t channels = r.color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    std::vector<png_bytep> rows(r.height);
    for (std::size_t y = 0; y < r.height; ++y)
        rows[y] = const_cast<png_bytep>(r.bytes.data() + y * r.width * channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng: failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8, r.color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (r.color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_PLTE(png, info, r.palette.data(), static_cast<int>(r.palette.size()));
    }
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Raster read_raster(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    png_byte header[8] = {};
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw DataError(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng: cannot create info struct");
    }
    Raster r;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng: corrupt image " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    r.width = png_get_image_width(png, info);
    r.height = png_get_image_height(png, info);
    r.color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth != 8 || (r.color_type != PNG_COLOR_TYPE_RGB && r.color_type != PNG_COLOR_TYPE_GRAY &&
                       r.color_type != PNG_COLOR_TYPE_PALETTE)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path.string() + ": only 8-bit RGB, gray and palette PNGs are supported");
    }
    if (r.color_type == PNG_COLOR_TYPE_PALETTE) {
        png_colorp pal = nullptr;
        int n = 0;
        png_get_PLTE(png, info, &pal, &n);
        r.palette.assign(pal, pal + n);
    }
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    r.bytes.resize(row_bytes * r.height);
    rows.resize(r.height);
    for (std::size_t y = 0; y < r.height; ++y) rows[y] = r.bytes.data() + y * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return r;
}

Raster expect(Raster r, int color_type, const std::filesystem::path& path) {
    if (r.color_type != color_type) throw DataError(path.string() + ": unexpected PNG color type");
    return r;
}

}  // namespace

Tensor quantize_image(const Tensor& image) {
    Tensor out = image;
    for (double& v : out.data()) v = static_cast<double>(to_byte(v)) / 255.0;
    return out;
}

void write_png_rgb(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_png_rgb: image must be [3 x H x W]");
    Raster r;
    r.height = image.dim(1);
    r.width = image.dim(2);
    r.color_type = PNG_COLOR_TYPE_RGB;
    r.bytes.resize(3 * r.width * r.height);
    for (std::size_t y = 0; y < r.height; ++y)
        for (std::size_t x = 0; x < r.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) r.bytes[(y * r.width + x) * 3 + c] = to_byte(image.at(c, y, x));
    write_raster(path, r);
}

Tensor read_png_rgb(const std::filesystem::path& path) {
    const Raster r = expect(read_raster(path), PNG_COLOR_TYPE_RGB, path);
    Tensor image({3, r.height, r.width});
    for (std::size_t y = 0; y < r.height; ++y)
        for (std::size_t x = 0; x < r.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                image.at(c, y, x) = static_cast<double>(r.bytes[(y * r.width + x) * 3 + c]) / 255.0;
    return image;
}

void write_png_mask(const std::filesystem::path& path, const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("write_png_mask: mask must be [H x W]");
    Raster r;
    r.height = mask.dim(0);
    r.width = mask.dim(1);
    r.color_type = PNG_COLOR_TYPE_GRAY;
    r.bytes.resize(r.width * r.height);
    for (std::size_t i = 0; i < r.bytes.size(); ++i) r.bytes[i] = mask[i] > 0.5 ? 255 : 0;
    write_raster(path, r);
}

Tensor read_png_mask(const std::filesystem::path& path) {
    const Raster r = expect(read_raster(path), PNG_COLOR_TYPE_GRAY, path);
    Tensor mask({r.height, r.width});
    for (std::size_t i = 0; i < r.bytes.size(); ++i) {
        if (r.bytes[i] != 0 && r.bytes[i] != 255) throw DataError(path.string() + ": mask is not binary");
        mask[i] = r.bytes[i] == 255 ? 1.0 : 0.0;
    }
    return mask;
}

void write_png_indexed(const std::filesystem::path& path, const IndexedImage& image, std::size_t palette_size) {
    if (palette_size == 0 || palette_size > 256) throw Error("palette size must be in [1, 256]");
    if (image.indices.size() != image.height * image.width) throw ShapeError("indexed image size mismatch");
    Raster r;
    r.height = image.height;
    r.width = image.width;
    r.color_type = PNG_COLOR_TYPE_PALETTE;
    r.bytes = image.indices;
    for (std::uint8_t v : r.bytes)
        if (v >= palette_size) throw Error("index exceeds palette size");
    for (std::size_t i = 0; i < palette_size; ++i) {
        const auto v = static_cast<png_byte>(i * 255 / std::max<std::size_t>(1, palette_size - 1));
        r.palette.push_back(png_color{v, static_cast<png_byte>(255 - v), static_cast<png_byte>((v * 7) & 0xff)});
    }
    write_raster(path, r);
}

IndexedImage read_png_indexed(const std::filesystem::path& path) {
    Raster r = expect(read_raster(path), PNG_COLOR_TYPE_PALETTE, path);
    for (std::uint8_t v : r.bytes)
        if (v >= r.palette.size()) throw DataError(path.string() + ": index outside palette");
    return IndexedImage{r.height, r.width, std::move(r.bytes)};
}

}  // namespace layerdiff

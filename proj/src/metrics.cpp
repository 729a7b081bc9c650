// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "layerdiff/error.hpp"
#include "layerdiff/image_io.hpp"

namespace layerdiff {

namespace fs = std::filesystem;

double psnr(const Tensor& a, const Tensor& b, double max_val) {
    require_same_shape(a, b, "psnr");
    if (a.size() == 0) throw ShapeError("psnr: empty images");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

namespace {

/// (h + 1) x (w + 1) inclusive prefix sums.
std::vector<double> integral(const double* v, std::size_t h, std::size_t w) {
    std::vector<double> s((h + 1) * (w + 1), 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        double row = 0.0;
        for (std::size_t x = 0; x < w; ++x) {
            row += v[y * w + x];
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    return s;
}

double box(const std::vector<double>& s, std::size_t w, std::size_t y, std::size_t x, std::size_t n) {
    const std::size_t W = w + 1;
    return s[(y + n) * W + x + n] - s[y * W + x + n] - s[(y + n) * W + x] + s[y * W + x];
}

double ssim_channel(const double* a, const double* b, std::size_t h, std::size_t w, const SsimOptions& o) {
    const std::size_t n = o.window;
    std::vector<double> aa(h * w), bb(h * w), ab(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto sa = integral(a, h, w), sb = integral(b, h, w);
    const auto saa = integral(aa.data(), h, w), sbb = integral(bb.data(), h, w), sab = integral(ab.data(), h, w);
    const double c1 = (o.k1 * o.range) * (o.k1 * o.range), c2 = (o.k2 * o.range) * (o.k2 * o.range);
    const double inv = 1.0 / static_cast<double>(n * n);
    double total = 0.0;
    for (std::size_t y = 0; y + n <= h; ++y)
        for (std::size_t x = 0; x + n <= w; ++x) {
            const double ma = box(sa, w, y, x, n) * inv, mb = box(sb, w, y, x, n) * inv;
            const double va = std::max(0.0, box(saa, w, y, x, n) * inv - ma * ma);
            const double vb = std::max(0.0, box(sbb, w, y, x, n) * inv - mb * mb);
            const double cov = box(sab, w, y, x, n) * inv - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    return total / static_cast<double>((h - n + 1) * (w - n + 1));
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opts) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 2 && a.rank() != 3) throw ShapeError("ssim: images must be [H x W] or [C x H x W]");
    const std::size_t c = a.rank() == 3 ? a.dim(0) : 1;
    const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
    if (opts.window == 0 || h < opts.window || w < opts.window) {
        throw ShapeError("ssim: image " + shape_str(a.shape()) + " is smaller than the " + std::to_string(opts.window) +
                         "x" + std::to_string(opts.window) + " window");
    }
    double total = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) total += ssim_channel(a.raw() + ch * h * w, b.raw() + ch * h * w, h, w, opts);
    return total / static_cast<double>(c);
}

double masked_mse(const Tensor& a, const Tensor& b, const Tensor& mask) {
    require_same_shape(a, b, "masked_mse");
    if (mask.rank() != 2) throw ShapeError("masked_mse: mask must be [H x W]");
    const std::size_t hw = mask.size();
    if (a.size() % hw != 0 || a.dim(a.rank() - 1) != mask.dim(1)) throw ShapeError("masked_mse: mask extent mismatch");
    const std::size_t c = a.size() / hw;
    double se = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < hw; ++i) {
        if (mask[i] != 1.0) continue;
        ++count;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = a[ch * hw + i] - b[ch * hw + i];
            se += d * d;
        }
    }
    if (count == 0) throw Error("masked_mse: mask is empty");
    return se / static_cast<double>(count * c);
}

double masked_psnr(const Tensor& a, const Tensor& b, const Tensor& mask, double max_val) {
    const double mse = masked_mse(a, b, mask);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

std::string EvalReport::to_json() const {
    using nlohmann::json;
    json rows = json::array();
    for (const auto& r : per_sample) {
        rows.push_back({{"name", r.name}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"masked_mse", r.masked_mse}});
    }
    const json out = {{"per_sample", rows},
                      {"aggregate",
                       {{"psnr", aggregate.psnr}, {"ssim", aggregate.ssim}, {"masked_mse", aggregate.masked_mse}}}};
    return out.dump(2);
}

namespace {

std::vector<std::string> png_names(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

EvalReport eval_report(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& masks_dir) {
    const auto pred = png_names(pred_dir);
    const auto gt = png_names(gt_dir);
    if (pred.size() != gt.size()) {
        throw DataError("prediction count " + std::to_string(pred.size()) + " differs from ground-truth count " +
                        std::to_string(gt.size()));
    }
    if (pred.empty()) throw DataError("no PNG files in " + pred_dir.string());
    EvalReport report;
    for (const auto& name : pred) {
        if (!fs::exists(gt_dir / name)) throw DataError("missing ground truth " + (gt_dir / name).string());
        const Tensor a = read_png_rgb(pred_dir / name);
        const Tensor b = read_png_rgb(gt_dir / name);
        SampleMetrics m;
        m.name = name;
        const double p = psnr(a, b);
        m.psnr = std::isinf(p) ? kPsnrIdentical : p;
        m.ssim = ssim(a, b);
        if (!masks_dir.empty()) {
            if (!fs::exists(masks_dir / name)) throw DataError("missing mask " + (masks_dir / name).string());
            m.masked_mse = masked_mse(a, b, read_png_mask(masks_dir / name));
        }
        report.per_sample.push_back(m);
    }
    const double inv = 1.0 / static_cast<double>(report.per_sample.size());
    report.aggregate.name = "aggregate";
    for (const auto& r : report.per_sample) {
        report.aggregate.psnr += r.psnr * inv;
        report.aggregate.ssim += r.ssim * inv;
        report.aggregate.masked_mse += r.masked_mse * inv;
    }
    return report;
}

}  // namespace layerdiff

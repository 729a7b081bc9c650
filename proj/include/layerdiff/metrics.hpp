// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "layerdiff/tensor.hpp"

namespace layerdiff {

/// Reported in place of +inf for identical images.
inline constexpr double kPsnrIdentical = 99.0;

/// 10 log10(max^2 / MSE); +inf when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);

struct SsimOptions {
    std::size_t window = 7;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

/// Mean SSIM over all valid uniform windows (population statistics). [H x W]
/// inputs are one channel; [C x H x W] inputs average the per-channel means.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opts = {});

/// Mean squared difference over pixels with M = 1 (all channels). Throws on
/// an empty mask.
double masked_mse(const Tensor& a, const Tensor& b, const Tensor& mask);

/// PSNR restricted to pixels with M = 1.
double masked_psnr(const Tensor& a, const Tensor& b, const Tensor& mask, double max_val = 1.0);

struct SampleMetrics {
    std::string name;
    double psnr = 0.0;  // kPsnrIdentical for identical images
    double ssim = 0.0;
    double masked_mse = 0.0;  // 0 when no mask is available
};

struct EvalReport {
    std::vector<SampleMetrics> per_sample;
    SampleMetrics aggregate;

    /// {"per_sample": [...], "aggregate": {"psnr", "ssim", "masked_mse"}}
    std::string to_json() const;
};

/// Compares every PNG in pred_dir with the same-named file in gt_dir; with
/// a non-empty masks_dir, the same-named grayscale mask selects the region
/// for masked_mse. Throws DataError on count mismatches or missing files.
EvalReport eval_report(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                       const std::filesystem::path& masks_dir = {});

}  // namespace layerdiff

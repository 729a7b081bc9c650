// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "layerdiff/conditioning.hpp"
#include "layerdiff/masks.hpp"
#include "layerdiff/rng.hpp"

namespace layerdiff {

struct SceneConfig {
    std::size_t size = 32;
    std::size_t min_instances = 1;
    std::size_t max_instances = 4;
    /// Probability that a scene's figures may overlap; otherwise placement
    /// is resampled until masks are disjoint.
    double occlusion_prob = 0.3;
    double texture_amplitude = 0.02;

    void validate() const;
};

/// One synthetic scene. Images are [3 x H x W] in [0, 1], quantized to
/// multiples of 1/255 so PNG storage is lossless.
struct SceneSample {
    Tensor composite;
    Tensor background;
    /// Per-instance layer: the background with that figure painted over it.
    std::vector<Tensor> layers;
    MaskSet masks;
    std::vector<Skeleton> keypoints;
    ParsingMap parsing;
    std::vector<int> prompt;

    std::size_t instance_count() const noexcept { return masks.count(); }
    std::size_t size() const { return composite.dim(1); }
};

SceneSample generate_scene(DRng& rng, const SceneConfig& cfg);

/// Per-joint Gaussian peaks exp(-d^2 / 2 sigma^2), maximum over skeletons;
/// invisible joints leave their channel at zero.
PoseMap render_pose_map(std::span<const Skeleton> skeletons, std::size_t height, std::size_t width,
                        double sigma = 1.5);

struct AugmentConfig {
    std::size_t crop = 0;  // 0 keeps the full frame
    double flip_prob = 0.0;
    std::size_t max_dilation = 0;
};

/// Shared random crop and horizontal flip of every aligned field, then an
/// independent dilation of each mask by 0..max_dilation pixels.
SceneSample augment(const SceneSample& sample, DRng& rng, const AugmentConfig& cfg);

/// Mirrors every field left to right; left/right joints swap names.
SceneSample flip_horizontal(const SceneSample& sample);

/// File layout per sample i: composite_i.png, background_i.png,
/// mask_i_k.png, layer_i_k.png, pose_i.json, parsing_i.png, prompt_i.txt
/// (i zero-padded to five digits, instance k counted from 1), plus
/// manifest.json.
void write_dataset(std::span<const SceneSample> samples, const std::filesystem::path& dir,
                   const SceneConfig& cfg, std::uint64_t seed);
std::vector<SceneSample> read_dataset(const std::filesystem::path& dir);
SceneSample read_sample(const std::filesystem::path& dir, std::size_t index);

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "layerdiff/diffusion.hpp"
#include "layerdiff/scenes.hpp"

namespace layerdiff {

/// 0-based instance indices to drop.
using RemovalSet = std::vector<std::size_t>;

/// Painter's composite: starts from the background and paints every kept
/// layer inside its mask, back to front in the masks' depth order. Throws
/// on indices >= N.
Tensor compose(const LayerSet& layers, const RemovalSet& remove);

/// Parses a 1-based comma list ("1,3"), "all" or "none"/"" into a 0-based set.
RemovalSet parse_removal(const std::string& text, std::size_t n);

/// Ground-truth layers of a generated scene.
LayerSet scene_layers(const SceneSample& sample);

struct ErasedScene {
    LayerSet layers;
    Tensor image;
};

/// Builds the guidance conditions for the sample, generates all layers and
/// composes them without the removed instances.
ErasedScene erase(const SceneSample& sample, const RemovalSet& remove, const LayeredModel& model,
                  const NoiseSchedule& schedule, const DRng& rng, const DdimOptions& opts);

/// Layer directory: layer_<k>.png and mask_<k>.png for k = 1..N (the same
/// numbering as removal lists), background.png, and layers.json with the
/// count and the 0-based back-to-front depth order.
void write_layer_set(const LayerSet& layers, const std::filesystem::path& dir);
LayerSet read_layer_set(const std::filesystem::path& dir);

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "layerdiff/denoiser.hpp"
#include "layerdiff/diffusion.hpp"
#include "layerdiff/scenes.hpp"
#include "layerdiff/training.hpp"

namespace layerdiff {

struct DiffusionConfig {
    std::size_t timesteps = 1000;
    double beta_min = 1e-4;
    double beta_max = 2e-2;
    /// Sampling clamps predicted latents to the model range by default.
    DdimOptions ddim{25, 1.0};

    NoiseSchedule schedule() const { return make_schedule(timesteps, beta_min, beta_max); }
};

/// The whole run description; sections model, diffusion, training, data.
struct AppConfig {
    DenoiserConfig model;
    DiffusionConfig diffusion;
    TrainConfig training;
    SceneConfig data;

    /// Throws ConfigError on inconsistent sections.
    void validate() const;
};

/// Built-in defaults at 32x32.
AppConfig default_config();
/// 16x16 scenes, widths [16, 32] and a 200/400 step ramp.
AppConfig toy_config();

std::string config_to_json(const AppConfig& cfg);
/// Keys absent from the text keep their default; unknown keys are errors.
AppConfig config_from_json(const std::string& text, const AppConfig& base = default_config());
AppConfig load_config(const std::filesystem::path& path);

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layerdiff/denoiser.hpp"
#include "layerdiff/scenes.hpp"
#include "layerdiff/training.hpp"

namespace layerdiff {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct SelfCheckReport {
    std::vector<SuiteResult> suites;
    bool passed() const;
};

/// Small model and matching scene used by the gradient oracle: 8x8 images,
/// 2x2 patches, two instances.
DenoiserConfig tiny_model_config();
SceneSample tiny_scene(std::uint64_t seed);

/// Gives every zero-initialized tensor (adapter B, spatial bias, offset
/// encoder) small random values so that all gradients are informative.
void randomize_zero_init(LayeredModel& model, DRng& rng);

struct GradientProbe {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

/// Compares reverse-mode gradients of the full per-sample training loss
/// (joint stage, region loss on) against central differences on `count`
/// elements drawn from every parameter family. The difference step is
/// step_size * max(1, |p|), extrapolated from steps h and h/2; much
/// smaller steps let rounding in the loss sum dominate.
std::vector<GradientProbe> gradient_probes(std::size_t count, std::uint64_t seed, double step_size = 4e-3);

SuiteResult check_gradients(std::uint64_t seed = 11);
SuiteResult check_zero_init(std::uint64_t seed = 12);
SuiteResult check_schedule(std::uint64_t seed = 13);
SuiteResult check_composition(std::uint64_t seed = 14);

SelfCheckReport run_selfcheck(std::uint64_t seed = 0);

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "layerdiff/conditioning.hpp"
#include "layerdiff/denoiser.hpp"
#include "layerdiff/masks.hpp"
#include "layerdiff/rng.hpp"

namespace layerdiff {

struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    std::size_t steps() const noexcept { return beta.size(); }
};

/// Linear betas from beta_min to beta_max over T steps (T = 1 uses beta_min).
NoiseSchedule make_schedule(std::size_t T = 1000, double beta_min = 1e-4, double beta_max = 2e-2);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor add_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);
Var add_noise(const Var& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);
/// The same map with an explicit abar, for endpoint checks.
Tensor add_noise_abar(const Tensor& z0, double alpha_bar, const Tensor& eps);

/// n evenly strided timesteps, descending: t_i = T - 1 - i * (T / n).
std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t n_steps);

struct DdimOptions {
    std::size_t steps = 25;
    /// Clamp each predicted z0 to [-clip, clip]; 0 disables clamping.
    double clip_x0 = 0.0;
};

using EpsModel = std::function<Tensor(const Tensor& z_t, std::size_t t)>;
using JointEpsModel = std::function<std::vector<Tensor>(const std::vector<Tensor>& z_t, std::size_t t)>;

/// Deterministic (eta = 0) DDIM from a given starting latent. The last step
/// uses abar_prev = 1 and so returns the predicted z0.
Tensor ddim_sample_from(const EpsModel& model, const NoiseSchedule& schedule, Tensor z_T, const DdimOptions& opts);
/// Starts from randn(shape, rng).
Tensor ddim_sample(const EpsModel& model, const NoiseSchedule& schedule, const Shape& shape, DRng& rng,
                   const DdimOptions& opts);
/// Several chains advanced in lockstep through one model call per step.
std::vector<Tensor> ddim_sample_joint(const JointEpsModel& model, const NoiseSchedule& schedule,
                                      std::vector<Tensor> z_T, const DdimOptions& opts);

/// Generated instance layers plus background, all [3 x H x W] in [0, 1].
struct LayerSet {
    std::vector<Tensor> layers;
    Tensor background;
    MaskSet masks;

    std::size_t count() const noexcept { return layers.size(); }
    /// Throws unless N >= 1 and every image and mask shares extents.
    void validate() const;
};

/// [0, 1] image -> model range [-1, 1] and back (the inverse clamps and
/// quantizes to 1/255 steps).
Tensor to_model_range(const Tensor& image);
Tensor from_model_range(const Tensor& image);

/// One DDIM chain per foreground instance (fg branch, mask M_k, C^(k)) and
/// one for the background (bg branch, union mask, C_bg). Chain k draws its
/// start noise from rng.split(k), the background from rng.split(N). Spatial
/// offsets of the union mask are removed before decoding.
LayerSet generate_layers(const MaskSet& masks, const BranchConditions& conditions, const LayeredModel& model,
                         const NoiseSchedule& schedule, const DRng& rng, const DdimOptions& opts);

}  // namespace layerdiff

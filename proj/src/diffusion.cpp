// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "layerdiff/attention.hpp"
#include "layerdiff/error.hpp"
#include "layerdiff/image_io.hpp"

namespace layerdiff {

NoiseSchedule make_schedule(std::size_t T, double beta_min, double beta_max) {
    if (T == 0) throw ConfigError("schedule needs at least one timestep");
    if (!(beta_min > 0.0) || beta_min > beta_max || !(beta_max < 1.0)) {
        throw ConfigError("schedule bounds must satisfy 0 < beta_min <= beta_max < 1");
    }
    NoiseSchedule s;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        s.beta[t] = beta_min + (beta_max - beta_min) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

namespace {

double abar_at(const NoiseSchedule& schedule, std::size_t t) {
    if (t >= schedule.steps()) {
        throw Error("timestep " + std::to_string(t) + " out of range for " + std::to_string(schedule.steps()) +
                    " steps");
    }
    return schedule.alpha_bar[t];
}

}  // namespace

Tensor add_noise_abar(const Tensor& z0, double alpha_bar, const Tensor& eps) {
    require_same_shape(z0, eps, "add_noise");
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

Tensor add_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
    return add_noise_abar(z0, abar_at(schedule, t), eps);
}

Var add_noise(const Var& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
    const double ab = abar_at(schedule, t);
    require_same_shape(z0.value(), eps, "add_noise");
    Tensor scaled = eps;
    const double b = std::sqrt(1.0 - ab);
    for (double& v : scaled.data()) v *= b;
    return add(scale(z0, std::sqrt(ab)), constant(std::move(scaled)));
}

std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t n_steps) {
    if (n_steps < 1) throw ConfigError("DDIM needs at least one step");
    if (n_steps > T) {
        throw ConfigError("DDIM steps (" + std::to_string(n_steps) + ") exceed schedule length " + std::to_string(T));
    }
    const std::size_t stride = T / n_steps;
    std::vector<std::size_t> ts(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) ts[i] = T - 1 - i * stride;
    return ts;
}

namespace {

void ddim_step(Tensor& z, const Tensor& eps, double ab, double ab_prev, double clip) {
    require_same_shape(z, eps, "ddim");
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < z.size(); ++i) {
        double x0 = (z[i] - sb * eps[i]) / sa;
        if (clip > 0.0) x0 = std::clamp(x0, -clip, clip);
        z[i] = pa * x0 + pb * eps[i];
    }
    if (!z.all_finite()) throw NumericError("ddim: non-finite latent");
}

}  // namespace

std::vector<Tensor> ddim_sample_joint(const JointEpsModel& model, const NoiseSchedule& schedule,
                                      std::vector<Tensor> z, const DdimOptions& opts) {
    const auto ts = ddim_timesteps(schedule.steps(), opts.steps);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double ab = schedule.alpha_bar[ts[i]];
        const double ab_prev = i + 1 < ts.size() ? schedule.alpha_bar[ts[i + 1]] : 1.0;
        const std::vector<Tensor> eps = model(z, ts[i]);
        if (eps.size() != z.size()) throw ShapeError("ddim: model returned the wrong number of predictions");
        for (std::size_t c = 0; c < z.size(); ++c) ddim_step(z[c], eps[c], ab, ab_prev, opts.clip_x0);
    }
    return z;
}

Tensor ddim_sample_from(const EpsModel& model, const NoiseSchedule& schedule, Tensor z_T, const DdimOptions& opts) {
    std::vector<Tensor> z;
    z.push_back(std::move(z_T));
    auto joint = [&](const std::vector<Tensor>& zs, std::size_t t) { return std::vector<Tensor>{model(zs[0], t)}; };
    return std::move(ddim_sample_joint(joint, schedule, std::move(z), opts).front());
}

Tensor ddim_sample(const EpsModel& model, const NoiseSchedule& schedule, const Shape& shape, DRng& rng,
                   const DdimOptions& opts) {
    return ddim_sample_from(model, schedule, randn(shape, rng), opts);
}

void LayerSet::validate() const {
    if (layers.empty()) throw ShapeError("layer set needs at least one layer");
    if (layers.size() != masks.count()) throw ShapeError("layer set: layer and mask counts differ");
    masks.validate();
    for (const auto& l : layers) require_same_shape(l, background, "layer set");
    if (background.rank() != 3 || background.dim(1) != masks.height() || background.dim(2) != masks.width()) {
        throw ShapeError("layer set: mask extents do not match the images");
    }
}

Tensor to_model_range(const Tensor& image) {
    Tensor out = image;
    for (double& v : out.data()) v = 2.0 * v - 1.0;
    return out;
}

Tensor from_model_range(const Tensor& image) {
    Tensor out = image;
    for (double& v : out.data()) v = (v + 1.0) * 0.5;
    return quantize_image(out);
}

LayerSet generate_layers(const MaskSet& masks, const BranchConditions& conditions, const LayeredModel& model,
                         const NoiseSchedule& schedule, const DRng& rng, const DdimOptions& opts) {
    masks.validate();
    const std::size_t n = masks.count();
    if (conditions.fg.size() != n) {
        throw ShapeError("generate_layers: " + std::to_string(conditions.fg.size()) + " foreground conditions for " +
                         std::to_string(n) + " masks");
    }
    const DenoiserConfig& cfg = model.config();
    const std::size_t ls = cfg.latent_size();
    const Shape shape{cfg.latent_channels(), ls, ls};
    const Tensor u = union_mask(masks);

    std::vector<Tensor> starts;
    for (std::size_t k = 0; k <= n; ++k) {
        DRng sub = rng.split(k);
        starts.push_back(randn(shape, sub));
    }

    NoGradGuard no_grad;
    auto joint = [&](const std::vector<Tensor>& zs, std::size_t t) {
        std::vector<BranchInput> inputs(n + 1);
        for (std::size_t k = 0; k <= n; ++k) {
            inputs[k].z_t = constant(zs[k]);
            inputs[k].t = t;
            inputs[k].branch = k < n ? Branch::fg : Branch::bg;
            inputs[k].condition = k < n ? &conditions.fg[k] : &conditions.bg;
            inputs[k].region = k < n ? &masks.masks[k] : &u;
        }
        std::vector<Tensor> eps;
        if (cfg.layer_exchange) {
            for (const Var& v : model.unet().forward(inputs)) eps.push_back(v.value());
        } else {
            for (const auto& in : inputs) eps.push_back(model.unet().forward(in).value());
        }
        return eps;
    };
    std::vector<Tensor> z0 = ddim_sample_joint(joint, schedule, std::move(starts), opts);

    const Tensor offset = model.offsets()(downsample_mask(u, ls, ls)).value();
    auto decode = [&](Tensor z) {
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= offset[i];
        return from_model_range(model.codec().decode(z));
    };
    LayerSet out;
    out.masks = masks;
    for (std::size_t k = 0; k < n; ++k) out.layers.push_back(decode(std::move(z0[k])));
    out.background = decode(std::move(z0[n]));
    return out;
}

}  // namespace layerdiff

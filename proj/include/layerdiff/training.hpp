// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "layerdiff/denoiser.hpp"
#include "layerdiff/diffusion.hpp"
#include "layerdiff/scenes.hpp"

namespace layerdiff {

enum class Stage { bg_only, ramp, joint };
std::string to_string(Stage stage);

/// Foreground-loss ramp over training steps.
struct StageController {
    std::size_t t0 = 8000;
    std::size_t t1 = 12000;
    double lambda_max = 1.0;

    void validate() const;
    /// bg_only while the ramp weight is still zero (step <= t0), ramp up to
    /// t1, joint afterwards.
    Stage stage(std::size_t step) const;
};

/// 0 before t0, linear to lambda_max at t1, lambda_max after.
double lambda_t(std::size_t step, const StageController& ctrl);

enum class RegionMode { inside, outside };
RegionMode parse_region_mode(const std::string& text);
std::string to_string(RegionMode mode);

/// Losses take the sampled noise eps, a prediction [C x h x w] and, where
/// masked, a binary [h x w] latent-resolution mask shared by all channels.
Var foreground_loss(const Tensor& eps, const Var& pred, const Tensor& mask, RegionMode mode = RegionMode::inside);
Var background_loss(const Tensor& eps, const Var& pred);
/// ||M r||^2 + beta_b ||B(M) r||^2 + beta_g ||M grad r||^2 with r = eps - pred,
/// B(M) the one-pixel boundary band and grad the forward differences along
/// both spatial axes.
Var region_loss(const Tensor& eps, const Var& pred, const Tensor& mask, double beta_b = 0.5, double beta_g = 0.25);
/// lambda_t(step) * sum(fg) + bg.
Var total_loss(std::span<const Var> fg_losses, const Var& bg_loss, std::size_t step, const StageController& ctrl);

struct OptimConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    /// Global gradient-norm clip over the updated parameters; 0 disables.
    double grad_clip = 0.0;
};

/// AdamW moments, aligned with a ParameterSet's order.
struct OptimState {
    std::size_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static OptimState zeros(const ParameterSet& params);
};

/// Decoupled weight-decay Adam step on every unfrozen parameter; frozen
/// parameters and their moments are left untouched. grads[i] belongs to
/// params.items()[i].
void adamw_update(const ParameterSet& params, std::span<const Tensor> grads, OptimState& state,
                  const OptimConfig& cfg);

struct TrainConfig {
    std::size_t steps = 800;
    std::size_t batch_size = 1;
    StageController ctrl;
    OptimConfig optim;
    RegionMode fg_loss_region = RegionMode::inside;
    bool use_region_loss = false;
    double beta_b = 0.5;
    double beta_g = 0.25;
    /// Freeze the background adapters while the foreground ramp is running.
    bool protect_bg = true;
    AugmentConfig augment{0, 0.5, 0};
    std::size_t checkpoint_every = 0;

    void validate() const;
};

struct StepReport {
    std::size_t step = 0;
    Stage stage = Stage::bg_only;
    double lambda = 0.0;
    double bg_loss = 0.0;
    double fg_loss = 0.0;  // sum over instances, averaged over the batch
    double total = 0.0;
};

/// Marks parameters frozen for a stage: foreground-only parameters during
/// bg_only, background adapters during ramp when protect_bg is set.
void apply_stage_freezing(LayeredModel& model, Stage stage, bool protect_bg);

struct SampleLoss {
    Var total;
    double bg = 0.0;
    double fg = 0.0;  // summed over instances
};

/// Training objective of one (already augmented) sample. t and eps come
/// from rng, so equal rng states give equal losses. Foreground terms only
/// record gradients once their weight is positive or layer exchange
/// couples the branches.
SampleLoss sample_loss(const SceneSample& sample, const LayeredModel& model, const TrainConfig& cfg,
                       const NoiseSchedule& schedule, std::size_t step, DRng& rng);

/// One optimizer step on a batch. Each sample shares (t, eps) across its
/// branches: the background branch denoises the clean background, every
/// foreground branch the composite. The stage's freezing is applied first.
StepReport train_step(std::span<const SceneSample> batch, LayeredModel& model, const TrainConfig& cfg,
                      const NoiseSchedule& schedule, OptimState& optim, std::size_t step, DRng& rng);

/// Drives train_step over a dataset. Step s draws all of its randomness
/// from DRng(seed).split(kStepStream).split(s), so a resumed run replays
/// the unbroken one exactly.
class Trainer {
public:
    static constexpr std::uint64_t kStepStream = 0x5354455053ULL;

    Trainer(LayeredModel& model, std::vector<SceneSample> data, TrainConfig cfg, NoiseSchedule schedule,
            std::uint64_t seed);

    StepReport step();
    std::size_t steps_done() const noexcept { return step_; }
    const OptimState& optim() const noexcept { return optim_; }

    void restore(std::size_t step, OptimState optim);

private:
    LayeredModel& model_;
    std::vector<SceneSample> data_;
    TrainConfig cfg_;
    NoiseSchedule schedule_;
    std::uint64_t seed_;
    std::size_t step_ = 0;
    OptimState optim_;
};

/// Checkpoint file: "LDCKPT01" magic, u32 format version, u64 manifest
/// length, JSON manifest, u64 blob length, little-endian f64 blob. The
/// manifest records the config text, step, seed and an index of every
/// tensor (name -> offset, shape) in the blob.
struct Checkpoint {
    std::string config_json;
    std::size_t step = 0;
    std::uint64_t seed = 0;
    std::size_t optim_step = 0;
    std::map<std::string, Tensor> tensors;  // params, "adam_m/<name>", "adam_v/<name>"
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint make_checkpoint(const LayeredModel& model, const OptimState& optim, std::size_t step, std::uint64_t seed,
                           std::string config_json);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws DataError on a bad magic, version mismatch or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies parameters into the model and returns the optimizer state.
OptimState restore_checkpoint(const Checkpoint& ckpt, LayeredModel& model);

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "layerdiff/attention.hpp"
#include "layerdiff/conditioning.hpp"
#include "layerdiff/lora.hpp"
#include "layerdiff/nn.hpp"

namespace layerdiff {

enum class CodecMode { identity, patchify };

struct DenoiserConfig {
    std::size_t image_size = 32;
    std::size_t image_channels = 3;
    std::size_t patch = 2;
    CodecMode codec = CodecMode::patchify;
    std::vector<std::size_t> widths{32, 64};
    std::size_t groups = 8;
    std::size_t heads = 2;
    std::size_t d_cond = 64;
    std::vector<std::size_t> encoder_channels{16, 32};
    bool use_pose_parse = true;
    LoraConfig lora;
    /// Scale of the output convolution's initial weights.
    double out_gain = 0.1;

    bool boundary_smoothing = false;
    std::size_t smoothing_width = 1;
    bool layer_exchange = false;
    double exchange_gamma = 0.1;

    std::size_t latent_size() const;
    std::size_t latent_channels() const;
    /// Attention grid extent (latent size halved once per extra level).
    std::size_t attention_size() const;
    HmgConfig hmg() const;
    /// Throws ConfigError on inconsistent extents or widths.
    void validate() const;
};

/// Space-to-depth stand-in for a learned autoencoder; channel index of the
/// latent is c * p * p + dy * p + dx.
class LatentCodec {
public:
    LatentCodec() = default;
    LatentCodec(std::size_t patch, CodecMode mode) : patch_(patch), mode_(mode) {}

    std::size_t patch() const noexcept { return mode_ == CodecMode::identity ? 1 : patch_; }
    Tensor encode(const Tensor& image) const;
    Tensor decode(const Tensor& latent) const;

private:
    std::size_t patch_ = 2;
    CodecMode mode_ = CodecMode::patchify;
};

/// Bias-free 3x3 convolution from a latent-resolution mask to latent
/// channels; weights start at zero.
class OffsetEncoder {
public:
    OffsetEncoder() = default;
    explicit OffsetEncoder(std::size_t latent_channels);

    Var operator()(const Tensor& latent_mask) const;
    void collect(ParameterSet& params) const;

private:
    Var weight_;
};

/// z0 + offsets(union mask). The mask must already be at latent extent.
Var inject_spatial_offsets(const Var& z0, const Tensor& latent_mask, const OffsetEncoder& encoder);

/// Inside dilate(mask, width) - erode(mask, width) the features are
/// replaced by their 3x3 box blur; elsewhere they pass through.
Var boundary_smoothing(const Var& features, const Tensor& mask, std::size_t width);

/// ((1 - g) fg + g bg, (1 - g) bg + g fg).
std::pair<Var, Var> layer_exchange(const Var& fg, const Var& bg, double gamma);

/// Sinusoidal features [1 x dim] of a timestep.
Tensor timestep_features(std::size_t t, std::size_t dim);

struct ForwardOptions {
    bool use_lora = true;
    bool use_sma = true;
    bool use_hooks = true;
};

/// One branch of a denoiser call.
struct BranchInput {
    Var z_t;                                   // [latent_c x h x w]
    std::size_t t = 0;
    const ConditionSequence* condition = nullptr;  // nullptr or empty: no cross-attention
    Branch branch = Branch::bg;
    const Tensor* region = nullptr;            // pixel mask [H x W]: M_k for fg, union for bg
};

class UNet {
public:
    UNet() = default;
    UNet(const DenoiserConfig& cfg, DRng& rng);

    /// Runs all branches; with layer exchange enabled, foreground and
    /// background features are mixed after the attention block.
    std::vector<Var> forward(std::span<const BranchInput> inputs, const ForwardOptions& opts = {}) const;
    Var forward(const BranchInput& input, const ForwardOptions& opts = {}) const;

    BranchRouter& router() noexcept { return router_; }
    const BranchRouter& router() const noexcept { return router_; }
    const SpatialBias& spatial_bias() const noexcept { return sma_; }
    SpatialBias& spatial_bias() noexcept { return sma_; }

    /// Weights shared by every branch (excludes adapters).
    ParameterSet base_parameters() const;
    void collect(ParameterSet& params) const;

private:
    struct ResBlock {
        GroupNorm norm1, norm2;
        Conv2d conv1, conv2, skip;
        Linear temb;
        Var operator()(const Var& x, const Var& emb) const;
        void collect(ParameterSet& params, const std::string& prefix) const;
    };
    struct Level {
        ResBlock down;
        Conv2d downsample;  // absent on the lowest level
        Conv2d upsample;    // next level's width -> this level's width
        ResBlock up;
    };
    struct Encoded {
        Var h;
        Var emb;
        std::vector<Var> skips;
    };

    Encoded encode(const BranchInput& in, const ForwardOptions& opts) const;
    Var decode(Encoded state, const BranchInput& in, const ForwardOptions& opts) const;
    Var attention_block(const Var& h, const BranchInput& in, const ForwardOptions& opts) const;
    Var attend(const Var& x, const Var& context, const std::string& prefix, const Var& wq, const Var& wk,
               const Var& wv, Branch branch, const TokenMask* mask, const ForwardOptions& opts) const;

    DenoiserConfig cfg_;
    Linear time1_, time2_;
    Conv2d conv_in_;
    std::vector<Level> levels_;
    GroupNorm attn_norm_, cross_norm_, out_norm_;
    Var self_q_, self_k_, self_v_, cross_q_, cross_k_, cross_v_;
    Linear self_out_, cross_out_;
    Conv2d conv_out_;
    SpatialBias sma_;
    BranchRouter router_;
};

/// Everything a layered denoising run needs: codec, guidance encoders,
/// offset encoder and the adapter-routed UNet.
class LayeredModel {
public:
    LayeredModel() = default;
    LayeredModel(const DenoiserConfig& cfg, std::uint64_t seed);

    const DenoiserConfig& config() const noexcept { return cfg_; }
    const LatentCodec& codec() const noexcept { return codec_; }
    const ConditionEncoder& encoder() const noexcept { return encoder_; }
    const OffsetEncoder& offsets() const noexcept { return offsets_; }
    const UNet& unet() const noexcept { return unet_; }
    UNet& unet() noexcept { return unet_; }

    Var predict_noise(const BranchInput& input, const ForwardOptions& opts = {}) const {
        return unet_.forward(input, opts);
    }

    /// Stable ordering used by the optimizer and checkpoints.
    ParameterSet parameters() const;
    /// Parameters that only foreground branches reach: fg adapters and the
    /// target/context mask encoders.
    ParameterSet foreground_parameters() const;
    ParameterSet background_parameters() const;

private:
    DenoiserConfig cfg_;
    LatentCodec codec_;
    ConditionEncoder encoder_;
    OffsetEncoder offsets_;
    UNet unet_;
};

}  // namespace layerdiff

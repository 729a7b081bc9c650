// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/denoiser.hpp"

#include <cmath>
#include <numeric>

#include "layerdiff/error.hpp"
#include "layerdiff/masks.hpp"

namespace layerdiff {

namespace {

constexpr std::uint64_t kEncoderKey = 1;
constexpr std::uint64_t kUnetKey = 2;

std::size_t norm_groups(std::size_t wanted, std::size_t channels) { return std::gcd(wanted, channels); }

Var init_weight(std::size_t out, std::size_t in, DRng& rng) {
    Tensor w = randn({out, in}, rng);
    const double std = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.data()) v *= std;
    return parameter(std::move(w));
}

}  // namespace

std::size_t DenoiserConfig::latent_size() const {
    return codec == CodecMode::identity ? image_size : image_size / patch;
}

std::size_t DenoiserConfig::latent_channels() const {
    return codec == CodecMode::identity ? image_channels : image_channels * patch * patch;
}

std::size_t DenoiserConfig::attention_size() const {
    std::size_t s = latent_size();
    for (std::size_t i = 1; i < widths.size(); ++i) s /= 2;
    return s;
}

HmgConfig DenoiserConfig::hmg() const {
    HmgConfig h;
    h.image_size = image_size;
    h.latent_size = latent_size();
    h.d_cond = d_cond;
    h.channels = encoder_channels;
    h.use_pose_parse = use_pose_parse;
    return h;
}

void DenoiserConfig::validate() const {
    if (image_size == 0 || image_channels == 0) throw ConfigError("image extent must be positive");
    if (codec == CodecMode::patchify && (patch == 0 || image_size % patch != 0)) {
        throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                          std::to_string(patch));
    }
    if (widths.empty()) throw ConfigError("at least one UNet width is required");
    for (std::size_t w : widths)
        if (w == 0) throw ConfigError("UNet widths must be positive");
    std::size_t s = latent_size();
    for (std::size_t i = 1; i < widths.size(); ++i) {
        if (s % 2 != 0) throw ConfigError("latent size must halve evenly at every UNet level");
        s /= 2;
    }
    if (heads == 0 || widths.back() % heads != 0) throw ConfigError("heads must divide the attention width");
    if (d_cond == 0) throw ConfigError("d_cond must be positive");
    if (groups == 0) throw ConfigError("groups must be positive");
    for (std::size_t w : widths)
        if (w % groups != 0) throw ConfigError("groups must divide every UNet width");
    if (encoder_channels.empty()) throw ConfigError("encoder channels must not be empty");
    if (exchange_gamma < 0.0 || exchange_gamma > 1.0) throw ConfigError("exchange gamma must lie in [0, 1]");
}

Tensor LatentCodec::encode(const Tensor& image) const {
    if (image.rank() != 3) throw ShapeError("encode_latent: image must be [C x H x W]");
    const std::size_t p = patch();
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h % p != 0 || w % p != 0) {
        throw ShapeError("encode_latent: " + shape_str(image.shape()) + " is not divisible by patch " +
                         std::to_string(p));
    }
    Tensor z({c * p * p, h / p, w / p});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                z.at(ch * p * p + (y % p) * p + x % p, y / p, x / p) = image.at(ch, y, x);
    return z;
}

Tensor LatentCodec::decode(const Tensor& latent) const {
    if (latent.rank() != 3) throw ShapeError("decode_latent: latent must be [C x h x w]");
    const std::size_t p = patch();
    if (latent.dim(0) % (p * p) != 0) throw ShapeError("decode_latent: channel count is not a multiple of p^2");
    const std::size_t c = latent.dim(0) / (p * p), h = latent.dim(1) * p, w = latent.dim(2) * p;
    Tensor image({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                image.at(ch, y, x) = latent.at(ch * p * p + (y % p) * p + x % p, y / p, x / p);
    return image;
}

OffsetEncoder::OffsetEncoder(std::size_t latent_channels)
    : weight_(parameter(Tensor({latent_channels, 1, 3, 3}))) {}

Var OffsetEncoder::operator()(const Tensor& latent_mask) const {
    if (latent_mask.rank() != 2) throw ShapeError("offset encoder: mask must be [h x w]");
    return conv2d(constant(latent_mask.reshaped({1, latent_mask.dim(0), latent_mask.dim(1)})), weight_, 1, 1);
}

void OffsetEncoder::collect(ParameterSet& params) const { params.add("offset.weight", weight_); }

Var inject_spatial_offsets(const Var& z0, const Tensor& latent_mask, const OffsetEncoder& encoder) {
    if (z0.shape().size() != 3 || latent_mask.rank() != 2 || z0.shape()[1] != latent_mask.dim(0) ||
        z0.shape()[2] != latent_mask.dim(1)) {
        throw ShapeError("inject_spatial_offsets: latent " + shape_str(z0.shape()) + " and mask " +
                         shape_str(latent_mask.shape()) + " disagree");
    }
    return add(z0, encoder(latent_mask));
}

Var boundary_smoothing(const Var& features, const Tensor& mask, std::size_t width) {
    const Shape& s = features.shape();
    if (s.size() != 3 || mask.rank() != 2 || mask.dim(0) != s[1] || mask.dim(1) != s[2]) {
        throw ShapeError("boundary_smoothing: features " + shape_str(s) + " and mask " + shape_str(mask.shape()) +
                         " disagree");
    }
    const Tensor band = boundary_band(mask, width);
    Tensor inside(s), outside(s);
    const std::size_t hw = s[1] * s[2];
    for (std::size_t c = 0; c < s[0]; ++c)
        for (std::size_t i = 0; i < hw; ++i) {
            inside[c * hw + i] = band[i];
            outside[c * hw + i] = 1.0 - band[i];
        }
    return add(mul(features, constant(std::move(outside))), mul(box_blur3(features), constant(std::move(inside))));
}

std::pair<Var, Var> layer_exchange(const Var& fg, const Var& bg, double gamma) {
    if (fg.shape() != bg.shape()) {
        throw ShapeError("layer_exchange: " + shape_str(fg.shape()) + " vs " + shape_str(bg.shape()));
    }
    return {add(scale(fg, 1.0 - gamma), scale(bg, gamma)), add(scale(bg, 1.0 - gamma), scale(fg, gamma))};
}

Tensor timestep_features(std::size_t t, std::size_t dim) {
    Tensor out({1, dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out[i] = std::sin(static_cast<double>(t) * freq);
        out[half + i] = std::cos(static_cast<double>(t) * freq);
    }
    return out;
}

Var UNet::ResBlock::operator()(const Var& x, const Var& emb) const {
    Var h = conv1(silu(norm1(x)));
    Var shift = temb(silu(emb));
    h = add_channel_bias(h, reshape(shift, {shift.shape()[1]}));
    h = conv2(silu(norm2(h)));
    return add(h, skip.weight.defined() ? skip(x) : x);
}

void UNet::ResBlock::collect(ParameterSet& params, const std::string& prefix) const {
    norm1.collect(params, prefix + ".norm1");
    conv1.collect(params, prefix + ".conv1");
    temb.collect(params, prefix + ".temb");
    norm2.collect(params, prefix + ".norm2");
    conv2.collect(params, prefix + ".conv2");
    if (skip.weight.defined()) skip.collect(params, prefix + ".skip");
}

UNet::UNet(const DenoiserConfig& cfg, DRng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto& w = cfg_.widths;
    const std::size_t temb = 4 * w.front();
    auto make_block = [&](std::size_t in, std::size_t out) {
        ResBlock b;
        b.norm1 = GroupNorm(in, norm_groups(cfg_.groups, in));
        b.conv1 = Conv2d(in, out, 3, 1, rng);
        b.temb = Linear(temb, out, rng);
        b.norm2 = GroupNorm(out, norm_groups(cfg_.groups, out));
        b.conv2 = Conv2d(out, out, 3, 1, rng);
        if (in != out) b.skip = Conv2d(in, out, 1, 1, rng);
        return b;
    };

    time1_ = Linear(w.front(), temb, rng);
    time2_ = Linear(temb, temb, rng);
    conv_in_ = Conv2d(cfg_.latent_channels(), w.front(), 3, 1, rng);
    levels_.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        levels_[i].down = make_block(i == 0 ? w.front() : w[i - 1], w[i]);
        if (i + 1 < w.size()) levels_[i].downsample = Conv2d(w[i], w[i], 3, 2, rng);
    }
    for (std::size_t i = w.size() - 1; i-- > 0;) {
        levels_[i].upsample = Conv2d(w[i + 1], w[i], 3, 1, rng);
        levels_[i].up = make_block(2 * w[i], w[i]);
    }

    const std::size_t c = w.back();
    attn_norm_ = GroupNorm(c, norm_groups(cfg_.groups, c));
    cross_norm_ = GroupNorm(c, norm_groups(cfg_.groups, c));
    self_q_ = init_weight(c, c, rng);
    self_k_ = init_weight(c, c, rng);
    self_v_ = init_weight(c, c, rng);
    cross_q_ = init_weight(c, c, rng);
    cross_k_ = init_weight(c, cfg_.d_cond, rng);
    cross_v_ = init_weight(c, cfg_.d_cond, rng);
    self_out_ = Linear(c, c, rng);
    cross_out_ = Linear(c, c, rng);
    out_norm_ = GroupNorm(w.front(), norm_groups(cfg_.groups, w.front()));
    conv_out_ = Conv2d(w.front(), cfg_.latent_channels(), 3, 1, rng, true, cfg_.out_gain);
    sma_ = SpatialBias::zeros();

    router_.add_slot("self.q", c, c, Projection::q, rng, cfg_.lora);
    router_.add_slot("self.k", c, c, Projection::k, rng, cfg_.lora);
    router_.add_slot("self.v", c, c, Projection::v, rng, cfg_.lora);
    router_.add_slot("cross.q", c, c, Projection::q, rng, cfg_.lora);
    router_.add_slot("cross.k", cfg_.d_cond, c, Projection::k, rng, cfg_.lora);
    router_.add_slot("cross.v", cfg_.d_cond, c, Projection::v, rng, cfg_.lora);
}

Var UNet::attend(const Var& x, const Var& context, const std::string& prefix, const Var& wq, const Var& wk,
                 const Var& wv, Branch branch, const TokenMask* mask, const ForwardOptions& opts) const {
    auto adapter = [&](const char* p) -> const LoraAdapter* {
        return opts.use_lora ? &router_.adapter(branch, prefix + p) : nullptr;
    };
    const Var q = apply_projection(x, wq, adapter(".q"));
    const Var k = apply_projection(context, wk, adapter(".k"));
    const Var v = apply_projection(context, wv, adapter(".v"));
    const std::size_t heads = cfg_.heads, dh = q.shape()[1] / heads;
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Var qh = slice_cols(q, h * dh, dh), kh = slice_cols(k, h * dh, dh), vh = slice_cols(v, h * dh, dh);
        outs.push_back(mask && opts.use_sma ? sma_attention(qh, kh, vh, *mask, sma_) : vanilla_attention(qh, kh, vh));
    }
    return heads == 1 ? outs.front() : concat_cols(outs);
}

Var UNet::attention_block(const Var& h, const BranchInput& in, const ForwardOptions& opts) const {
    const std::size_t hs = h.shape()[1], ws = h.shape()[2];
    TokenMask mask;
    if (in.region) {
        mask = latent_token_mask(*in.region, hs, ws);
    } else {
        mask.labels.assign(hs * ws, 0);
    }
    Var tokens = to_tokens(h);
    const Var a = to_tokens(attn_norm_(h));
    tokens = add(tokens, self_out_(attend(a, a, "self", self_q_, self_k_, self_v_, in.branch, &mask, opts)));
    if (in.condition && in.condition->size() > 0) {
        const Var b = to_tokens(cross_norm_(from_tokens(tokens, hs, ws)));
        tokens = add(tokens, cross_out_(attend(b, in.condition->tokens, "cross", cross_q_, cross_k_, cross_v_,
                                               in.branch, nullptr, opts)));
    }
    return from_tokens(tokens, hs, ws);
}

UNet::Encoded UNet::encode(const BranchInput& in, const ForwardOptions& opts) const {
    const std::size_t ls = cfg_.latent_size();
    const Shape expected{cfg_.latent_channels(), ls, ls};
    if (!in.z_t.defined() || in.z_t.shape() != expected) {
        throw ShapeError("denoiser: latent must be " + shape_str(expected) + ", got " +
                         (in.z_t.defined() ? shape_str(in.z_t.shape()) : std::string("nothing")));
    }
    if (in.region && (in.region->rank() != 2 || in.region->dim(0) != cfg_.image_size ||
                      in.region->dim(1) != cfg_.image_size)) {
        throw ShapeError("denoiser: region mask must be " + std::to_string(cfg_.image_size) + "x" +
                         std::to_string(cfg_.image_size));
    }
    Encoded st;
    st.emb = time2_(silu(time1_(constant(timestep_features(in.t, cfg_.widths.front())))));
    Var h = conv_in_(in.z_t);
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        h = levels_[i].down(h, st.emb);
        if (i + 1 < levels_.size()) {
            st.skips.push_back(h);
            h = levels_[i].downsample(h);
        }
    }
    st.h = attention_block(h, in, opts);
    return st;
}

Var UNet::decode(Encoded st, const BranchInput& in, const ForwardOptions& opts) const {
    Var h = st.h;
    for (std::size_t i = levels_.size() - 1; i-- > 0;) {
        h = levels_[i].upsample(upsample_nearest2x(h));
        h = levels_[i].up(concat_rows({h, st.skips[i]}), st.emb);
    }
    if (opts.use_hooks && cfg_.boundary_smoothing && in.region) {
        const std::size_t ls = cfg_.latent_size();
        h = boundary_smoothing(h, downsample_mask(*in.region, ls, ls), cfg_.smoothing_width);
    }
    return conv_out_(silu(out_norm_(h)));
}

std::vector<Var> UNet::forward(std::span<const BranchInput> inputs, const ForwardOptions& opts) const {
    std::vector<Encoded> states;
    states.reserve(inputs.size());
    for (const auto& in : inputs) states.push_back(encode(in, opts));

    if (opts.use_hooks && cfg_.layer_exchange) {
        std::vector<std::size_t> fg;
        std::size_t bg = inputs.size();
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (inputs[i].branch == Branch::fg) {
                fg.push_back(i);
            } else {
                bg = i;
            }
        }
        if (!fg.empty() && bg < inputs.size()) {
            Var fg_mean = states[fg.front()].h;
            for (std::size_t j = 1; j < fg.size(); ++j) fg_mean = add(fg_mean, states[fg[j]].h);
            if (fg.size() > 1) fg_mean = scale(fg_mean, 1.0 / static_cast<double>(fg.size()));
            const Var bg_h = states[bg].h;
            for (std::size_t i : fg) states[i].h = layer_exchange(states[i].h, bg_h, cfg_.exchange_gamma).first;
            states[bg].h = layer_exchange(fg_mean, bg_h, cfg_.exchange_gamma).second;
        }
    }

    std::vector<Var> out;
    out.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) out.push_back(decode(std::move(states[i]), inputs[i], opts));
    return out;
}

Var UNet::forward(const BranchInput& input, const ForwardOptions& opts) const {
    return forward(std::span<const BranchInput>(&input, 1), opts).front();
}

ParameterSet UNet::base_parameters() const {
    ParameterSet p;
    time1_.collect(p, "unet.time1");
    time2_.collect(p, "unet.time2");
    conv_in_.collect(p, "unet.conv_in");
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        const std::string prefix = "unet.level" + std::to_string(i);
        levels_[i].down.collect(p, prefix + ".down");
        if (levels_[i].downsample.weight.defined()) levels_[i].downsample.collect(p, prefix + ".downsample");
        if (levels_[i].upsample.weight.defined()) {
            levels_[i].upsample.collect(p, prefix + ".upsample");
            levels_[i].up.collect(p, prefix + ".up");
        }
    }
    attn_norm_.collect(p, "unet.attn.norm");
    p.add("unet.attn.self.wq", self_q_);
    p.add("unet.attn.self.wk", self_k_);
    p.add("unet.attn.self.wv", self_v_);
    self_out_.collect(p, "unet.attn.self.out");
    p.add("unet.attn.sma_alpha", sma_.alpha);
    cross_norm_.collect(p, "unet.attn.cross_norm");
    p.add("unet.attn.cross.wq", cross_q_);
    p.add("unet.attn.cross.wk", cross_k_);
    p.add("unet.attn.cross.wv", cross_v_);
    cross_out_.collect(p, "unet.attn.cross.out");
    out_norm_.collect(p, "unet.out_norm");
    conv_out_.collect(p, "unet.conv_out");
    return p;
}

void UNet::collect(ParameterSet& params) const {
    params.append(base_parameters());
    router_.collect(params);
}

LayeredModel::LayeredModel(const DenoiserConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), codec_(cfg.patch, cfg.codec), offsets_(cfg.latent_channels()) {
    cfg_.validate();
    const DRng root(seed);
    DRng enc_rng = root.split(kEncoderKey);
    encoder_ = ConditionEncoder(cfg_.hmg(), enc_rng);
    DRng unet_rng = root.split(kUnetKey);
    unet_ = UNet(cfg_, unet_rng);
}

ParameterSet LayeredModel::parameters() const {
    ParameterSet p;
    encoder_.collect(p);
    offsets_.collect(p);
    unet_.collect(p);
    return p;
}

ParameterSet LayeredModel::foreground_parameters() const {
    ParameterSet p = unet_.router().parameters(Branch::fg);
    p.append(encoder_.foreground_parameters());
    return p;
}

ParameterSet LayeredModel::background_parameters() const { return unet_.router().parameters(Branch::bg); }

}  // namespace layerdiff

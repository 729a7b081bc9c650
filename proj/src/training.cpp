// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/training.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <optional>

#include "layerdiff/attention.hpp"
#include "layerdiff/error.hpp"

namespace layerdiff {

using nlohmann::json;

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::bg_only: return "bg_only";
        case Stage::ramp: return "ramp";
        case Stage::joint: return "joint";
    }
    return "?";
}

void StageController::validate() const {
    if (t0 >= t1) throw ConfigError("stage controller needs t0 < t1");
    if (!(lambda_max >= 0.0)) throw ConfigError("lambda must be non-negative");
}

Stage StageController::stage(std::size_t step) const {
    if (step <= t0) return Stage::bg_only;
    if (step <= t1) return Stage::ramp;
    return Stage::joint;
}

double lambda_t(std::size_t step, const StageController& ctrl) {
    if (step < ctrl.t0) return 0.0;
    if (step <= ctrl.t1) {
        return ctrl.lambda_max * static_cast<double>(step - ctrl.t0) / static_cast<double>(ctrl.t1 - ctrl.t0);
    }
    return ctrl.lambda_max;
}

RegionMode parse_region_mode(const std::string& text) {
    if (text == "inside") return RegionMode::inside;
    if (text == "outside") return RegionMode::outside;
    throw ConfigError("region mode must be 'inside' or 'outside', got '" + text + "'");
}

std::string to_string(RegionMode mode) { return mode == RegionMode::inside ? "inside" : "outside"; }

namespace {

Tensor broadcast_mask(const Tensor& mask, const Shape& shape, bool complement) {
    if (shape.size() != 3 || mask.rank() != 2 || mask.dim(0) != shape[1] || mask.dim(1) != shape[2]) {
        throw ShapeError("loss mask " + shape_str(mask.shape()) + " does not match prediction " + shape_str(shape));
    }
    Tensor out(shape);
    const std::size_t hw = mask.size();
    for (std::size_t c = 0; c < shape[0]; ++c)
        for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = complement ? 1.0 - mask[i] : mask[i];
    return out;
}

Var residual(const Tensor& eps, const Var& pred) {
    require_same_shape(eps, pred.value(), "loss");
    return sub(constant(eps), pred);
}

}  // namespace

Var foreground_loss(const Tensor& eps, const Var& pred, const Tensor& mask, RegionMode mode) {
    const Var r = residual(eps, pred);
    return sum_squares(mul(r, constant(broadcast_mask(mask, pred.shape(), mode == RegionMode::outside))));
}

Var background_loss(const Tensor& eps, const Var& pred) { return sum_squares(residual(eps, pred)); }

Var region_loss(const Tensor& eps, const Var& pred, const Tensor& mask, double beta_b, double beta_g) {
    if (beta_b < 0.0 || beta_g < 0.0) throw Error("region_loss: weights must be non-negative");
    const Var r = residual(eps, pred);
    const Var m = constant(broadcast_mask(mask, pred.shape(), false));
    const Var band = constant(broadcast_mask(boundary_band(mask, 1), pred.shape(), false));
    Var loss = sum_squares(mul(r, m));
    loss = add(loss, scale(sum_squares(mul(r, band)), beta_b));
    const Var grad_term = add(sum_squares(mul(forward_diff(r, 1), m)), sum_squares(mul(forward_diff(r, 2), m)));
    return add(loss, scale(grad_term, beta_g));
}

Var total_loss(std::span<const Var> fg_losses, const Var& bg_loss, std::size_t step, const StageController& ctrl) {
    if (fg_losses.empty()) return bg_loss;
    Var fg = fg_losses.front();
    for (std::size_t i = 1; i < fg_losses.size(); ++i) fg = add(fg, fg_losses[i]);
    return add(bg_loss, scale(fg, lambda_t(step, ctrl)));
}

OptimState OptimState::zeros(const ParameterSet& params) {
    OptimState s;
    for (const auto& p : params.items()) {
        s.m.emplace_back(p.var.shape());
        s.v.emplace_back(p.var.shape());
    }
    return s;
}

void adamw_update(const ParameterSet& params, std::span<const Tensor> grads, OptimState& state,
                  const OptimConfig& cfg) {
    const auto& items = params.items();
    if (grads.size() != items.size() || state.m.size() != items.size() || state.v.size() != items.size()) {
        throw ShapeError("adamw_update: parameter, gradient and moment counts differ");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < items.size(); ++i) {
        Var var = items[i].var;
        if (var.frozen()) continue;
        Tensor& p = var.mutable_value();
        const Tensor& g = grads[i];
        require_same_shape(p, g, "adamw_update");
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1, v_hat = v[j] / bc2;
            p[j] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p[j]);
        }
        if (!p.all_finite()) throw NumericError("adamw_update: parameter '" + items[i].name + "' became non-finite");
    }
}

void TrainConfig::validate() const {
    ctrl.validate();
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(optim.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (optim.beta1 < 0.0 || optim.beta1 >= 1.0 || optim.beta2 < 0.0 || optim.beta2 >= 1.0) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (optim.weight_decay < 0.0 || optim.grad_clip < 0.0) throw ConfigError("weight decay and clip must be >= 0");
    if (beta_b < 0.0 || beta_g < 0.0) throw ConfigError("region loss weights must be non-negative");
}

void apply_stage_freezing(LayeredModel& model, Stage stage, bool protect_bg) {
    const ParameterSet fg = model.foreground_parameters();
    for (const auto& p : fg.items()) {
        Var v = p.var;
        v.set_frozen(stage == Stage::bg_only);
    }
    const ParameterSet bg = model.background_parameters();
    for (const auto& p : bg.items()) {
        Var v = p.var;
        v.set_frozen(stage == Stage::ramp && protect_bg);
    }
}

SampleLoss sample_loss(const SceneSample& s, const LayeredModel& model, const TrainConfig& cfg,
                           const NoiseSchedule& schedule, std::size_t step, DRng& rng) {
    const DenoiserConfig& mc = model.config();
    if (s.size() != mc.image_size) {
        throw DataError("training sample is " + std::to_string(s.size()) + " pixels wide, model expects " +
                        std::to_string(mc.image_size));
    }
    const std::size_t ls = mc.latent_size();
    const std::size_t n = s.instance_count();
    const double lambda = lambda_t(step, cfg.ctrl);
    const bool fg_grad = lambda > 0.0 || mc.layer_exchange;

    const auto t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(schedule.steps() - 1)));
    const Tensor eps = randn({mc.latent_channels(), ls, ls}, rng);

    const Tensor u = union_mask(s.masks);
    const Var offset = model.offsets()(downsample_mask(u, ls, ls));
    const Var z_bg = add_noise(add(constant(model.codec().encode(to_model_range(s.background))), offset), t, eps,
                               schedule);
    const Var z_comp = add_noise(add(constant(model.codec().encode(to_model_range(s.composite))), offset), t, eps,
                                 schedule);

    const PoseMap pose = render_pose_map(s.keypoints, s.size(), s.size());
    const BranchConditions cond = build_conditions(model.encoder(), s.prompt, pose, s.parsing, s.masks);

    std::vector<BranchInput> inputs(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        inputs[k].t = t;
        inputs[k].branch = k < n ? Branch::fg : Branch::bg;
        inputs[k].z_t = k < n ? z_comp : z_bg;
        inputs[k].condition = k < n ? &cond.fg[k] : &cond.bg;
        inputs[k].region = k < n ? &s.masks.masks[k] : &u;
    }

    std::vector<Var> preds;
    if (mc.layer_exchange) {
        preds = model.unet().forward(inputs);
    } else {
        preds.resize(n + 1);
        preds[n] = model.unet().forward(inputs[n]);
        std::optional<NoGradGuard> guard;
        if (!fg_grad) guard.emplace();
        for (std::size_t k = 0; k < n; ++k) preds[k] = model.unet().forward(inputs[k]);
    }

    SampleLoss out;
    const Var bg = background_loss(eps, preds[n]);
    std::vector<Var> fg;
    {
        std::optional<NoGradGuard> guard;
        if (!fg_grad) guard.emplace();
        for (std::size_t k = 0; k < n; ++k) {
            const Tensor m = downsample_mask(s.masks.masks[k], ls, ls);
            fg.push_back(cfg.use_region_loss ? region_loss(eps, preds[k], m, cfg.beta_b, cfg.beta_g)
                                             : foreground_loss(eps, preds[k], m, cfg.fg_loss_region));
            out.fg += fg.back().item();
        }
    }
    out.bg = bg.item();
    out.total = fg_grad ? total_loss(fg, bg, step, cfg.ctrl) : bg;
    return out;
}

StepReport train_step(std::span<const SceneSample> batch, LayeredModel& model, const TrainConfig& cfg,
                      const NoiseSchedule& schedule, OptimState& optim, std::size_t step, DRng& rng) {
    if (batch.empty()) throw Error("train_step: empty batch");
    StepReport report;
    report.step = step;
    report.stage = cfg.ctrl.stage(step);
    report.lambda = lambda_t(step, cfg.ctrl);
    apply_stage_freezing(model, report.stage, cfg.protect_bg);

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Var loss;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        DRng sub = rng.split(b);
        const SceneSample sample = augment(batch[b], sub, cfg.augment);
        SampleLoss l = sample_loss(sample, model, cfg, schedule, step, sub);
        report.bg_loss += l.bg * inv_b;
        report.fg_loss += l.fg * inv_b;
        loss = loss.defined() ? add(loss, l.total) : l.total;
    }
    if (batch.size() > 1) loss = scale(loss, inv_b);
    report.total = loss.item();

    const ParameterSet params = model.parameters();
    if (optim.m.size() != params.size()) optim = OptimState::zeros(params);
    std::vector<Var> active;
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params.items()[i].var.frozen()) continue;
        active.push_back(params.items()[i].var);
        slots.push_back(i);
    }
    const std::vector<Tensor> active_grads = grad(loss, active, /*allow_unused=*/true);
    std::vector<Tensor> grads(params.size());
    double norm2 = 0.0;
    for (std::size_t j = 0; j < slots.size(); ++j) {
        for (double g : active_grads[j].data()) norm2 += g * g;
        grads[slots[j]] = active_grads[j];
    }
    if (cfg.optim.grad_clip > 0.0) {
        const double norm = std::sqrt(norm2);
        if (norm > cfg.optim.grad_clip) {
            const double f = cfg.optim.grad_clip / norm;
            for (std::size_t i : slots)
                for (double& g : grads[i].data()) g *= f;
        }
    }
    adamw_update(params, grads, optim, cfg.optim);
    model.unet().router().clamp_alpha();
    return report;
}

Trainer::Trainer(LayeredModel& model, std::vector<SceneSample> data, TrainConfig cfg, NoiseSchedule schedule,
                 std::uint64_t seed)
    : model_(model), data_(std::move(data)), cfg_(std::move(cfg)), schedule_(std::move(schedule)), seed_(seed) {
    cfg_.validate();
    if (data_.empty()) throw DataError("training needs at least one sample");
    optim_ = OptimState::zeros(model_.parameters());
}

StepReport Trainer::step() {
    DRng rng = DRng(seed_).split(kStepStream).split(step_);
    DRng pick = rng.split(0xDA7A);
    std::vector<SceneSample> batch;
    batch.reserve(cfg_.batch_size);
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
        batch.push_back(data_[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(data_.size() - 1)))]);
    }
    StepReport r = train_step(batch, model_, cfg_, schedule_, optim_, step_, rng);
    ++step_;
    return r;
}

void Trainer::restore(std::size_t step, OptimState optim) {
    step_ = step;
    optim_ = std::move(optim);
}

namespace {

constexpr char kMagic[8] = {'L', 'D', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_uint(const std::string& in, std::size_t& pos, int bytes) {
    if (pos + static_cast<std::size_t>(bytes) > in.size()) throw DataError("checkpoint is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
}

}  // namespace

Checkpoint make_checkpoint(const LayeredModel& model, const OptimState& optim, std::size_t step, std::uint64_t seed,
                           std::string config_json) {
    Checkpoint c;
    c.config_json = std::move(config_json);
    c.step = step;
    c.seed = seed;
    c.optim_step = optim.step;
    const ParameterSet params = model.parameters();
    const bool with_moments = optim.m.size() == params.size();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params.items()[i];
        c.tensors[p.name] = p.var.value();
        c.tensors["adam_m/" + p.name] = with_moments ? optim.m[i] : Tensor(p.var.shape());
        c.tensors["adam_v/" + p.name] = with_moments ? optim.v[i] : Tensor(p.var.shape());
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    json index = json::object();
    std::string blob;
    std::size_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        index[name] = {{"offset", offset}, {"shape", t.shape()}};
        for (double v : t.data()) put_u64(blob, std::bit_cast<std::uint64_t>(v));
        offset += t.size();
    }
    json config;
    try {
        config = ckpt.config_json.empty() ? json::object() : json::parse(ckpt.config_json);
    } catch (const json::exception& e) {
        throw Error("checkpoint config is not valid JSON: " + std::string(e.what()));
    }
    const json manifest = {{"version", kCheckpointVersion},
                           {"config", config},
                           {"step", ckpt.step},
                           {"seed", ckpt.seed},
                           {"rng", {{"seed", ckpt.seed}, {"stream", Trainer::kStepStream}, {"next_step", ckpt.step}}},
                           {"optimizer", {{"step", ckpt.optim_step}}},
                           {"tensors", index}};
    const std::string text = manifest.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    put_u64(out, text.size());
    out += text;
    put_u64(out, blob.size());
    out += blob;

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write checkpoint " + path.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw DataError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read checkpoint " + path.string());
    const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < sizeof kMagic || in.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0) {
        throw DataError(path.string() + " is not a checkpoint");
    }
    std::size_t pos = sizeof kMagic;
    const auto version = static_cast<std::uint32_t>(get_uint(in, pos, 4));
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t text_len = get_uint(in, pos, 8);
    if (text_len > in.size() - pos) throw DataError("checkpoint is truncated");
    const std::string text = in.substr(pos, text_len);
    pos += text_len;
    const std::uint64_t blob_len = get_uint(in, pos, 8);
    if (blob_len != in.size() - pos || blob_len % 8 != 0) throw DataError("checkpoint is truncated");
    const std::size_t blob_at = pos;
    const std::size_t n_values = blob_len / 8;

    Checkpoint c;
    try {
        const json manifest = json::parse(text);
        if (manifest.at("version").get<std::uint32_t>() != kCheckpointVersion) {
            throw DataError("checkpoint manifest version mismatch");
        }
        c.config_json = manifest.at("config").dump();
        c.step = manifest.at("step").get<std::size_t>();
        c.seed = manifest.at("seed").get<std::uint64_t>();
        c.optim_step = manifest.at("optimizer").at("step").get<std::size_t>();
        for (const auto& [name, entry] : manifest.at("tensors").items()) {
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto shape = entry.at("shape").get<Shape>();
            const std::size_t count = shape_size(shape);
            if (offset > n_values || count > n_values - offset) {
                throw DataError("checkpoint tensor '" + name + "' lies outside the blob");
            }
            Tensor t(shape);
            std::size_t p = blob_at + offset * 8;
            for (std::size_t i = 0; i < count; ++i) t[i] = std::bit_cast<double>(get_uint(in, p, 8));
            c.tensors.emplace(name, std::move(t));
        }
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
    }
    return c;
}

OptimState restore_checkpoint(const Checkpoint& ckpt, LayeredModel& model) {
    const ParameterSet params = model.parameters();
    OptimState optim;
    optim.step = ckpt.optim_step;
    auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw DataError("checkpoint lacks tensor '" + name + "'");
        if (it->second.shape() != shape) {
            throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                            ", model expects " + shape_str(shape));
        }
        return it->second;
    };
    for (const auto& p : params.items()) {
        Var v = p.var;
        v.mutable_value() = fetch(p.name, v.shape());
        optim.m.push_back(fetch("adam_m/" + p.name, v.shape()));
        optim.v.push_back(fetch("adam_v/" + p.name, v.shape()));
    }
    return optim;
}

}  // namespace layerdiff

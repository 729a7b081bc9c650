// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/config.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "layerdiff/error.hpp"

namespace layerdiff {

using nlohmann::json;

void AppConfig::validate() const {
    model.validate();
    training.validate();
    data.validate();
    if (data.size != model.image_size) {
        throw ConfigError("data.size (" + std::to_string(data.size) + ") must equal model.image_size (" +
                          std::to_string(model.image_size) + ")");
    }
    if (model.image_channels != 3) throw ConfigError("model.image_channels must be 3 for RGB scenes");
    if (diffusion.ddim.steps < 1 || diffusion.ddim.steps > diffusion.timesteps) {
        throw ConfigError("diffusion.ddim_steps must lie in [1, timesteps]");
    }
    if (diffusion.ddim.clip_x0 < 0.0) throw ConfigError("diffusion.clip_x0 must be >= 0");
    (void)diffusion.schedule();
}

AppConfig default_config() { return AppConfig{}; }

AppConfig toy_config() {
    AppConfig c;
    c.model.image_size = 16;
    c.model.widths = {16, 32};
    c.model.d_cond = 32;
    c.model.encoder_channels = {16, 32};
    c.data.size = 16;
    c.training.steps = 800;
    c.training.ctrl.t0 = 200;
    c.training.ctrl.t1 = 400;
    return c;
}

namespace {

/// Binds JSON keys of one section to struct fields in both directions.
class Section {
public:
    template <class T>
    void bind(const std::string& key, T& field) {
        writers_[key] = [&field](json& j, const std::string& k) { j[k] = field; };
        readers_[key] = [&field](const json& j) { field = j.get<T>(); };
        order_.push_back(key);
    }
    void bind_custom(const std::string& key, std::function<json()> get, std::function<void(const json&)> set) {
        writers_[key] = [get](json& j, const std::string& k) { j[k] = get(); };
        readers_[key] = std::move(set);
        order_.push_back(key);
    }

    json dump() const {
        json j = json::object();
        for (const auto& k : order_) writers_.at(k)(j, k);
        return j;
    }

    void load(const json& j, const std::string& name) const {
        if (!j.is_object()) throw ConfigError("config section '" + name + "' must be an object");
        for (const auto& [key, value] : j.items()) {
            auto it = readers_.find(key);
            if (it == readers_.end()) throw ConfigError("unknown config key '" + name + "." + key + "'");
            try {
                it->second(value);
            } catch (const json::exception& e) {
                throw ConfigError("config key '" + name + "." + key + "' has the wrong type: " + e.what());
            }
        }
    }

private:
    std::map<std::string, std::function<void(json&, const std::string&)>> writers_;
    std::map<std::string, std::function<void(const json&)>> readers_;
    std::vector<std::string> order_;
};

struct Schema {
    Section model, diffusion, training, data;
};

Schema bind_all(AppConfig& c) {
    Schema s;
    auto& m = c.model;
    s.model.bind("image_size", m.image_size);
    s.model.bind("image_channels", m.image_channels);
    s.model.bind("patch", m.patch);
    s.model.bind_custom(
        "codec", [&m] { return json(m.codec == CodecMode::patchify ? "patchify" : "identity"); },
        [&m](const json& j) {
            const auto v = j.get<std::string>();
            if (v != "patchify" && v != "identity") throw ConfigError("model.codec must be 'patchify' or 'identity'");
            m.codec = v == "patchify" ? CodecMode::patchify : CodecMode::identity;
        });
    s.model.bind("widths", m.widths);
    s.model.bind("groups", m.groups);
    s.model.bind("heads", m.heads);
    s.model.bind("d_cond", m.d_cond);
    s.model.bind("encoder_channels", m.encoder_channels);
    s.model.bind("use_pose_parse", m.use_pose_parse);
    s.model.bind("lora_rank", m.lora.rank);
    s.model.bind("lora_alpha", m.lora.alpha);
    s.model.bind("lora_init_std", m.lora.init_std);
    s.model.bind("out_gain", m.out_gain);
    s.model.bind("boundary_smoothing", m.boundary_smoothing);
    s.model.bind("smoothing_width", m.smoothing_width);
    s.model.bind("layer_exchange", m.layer_exchange);
    s.model.bind("exchange_gamma", m.exchange_gamma);

    auto& d = c.diffusion;
    s.diffusion.bind("timesteps", d.timesteps);
    s.diffusion.bind("beta_min", d.beta_min);
    s.diffusion.bind("beta_max", d.beta_max);
    s.diffusion.bind("ddim_steps", d.ddim.steps);
    s.diffusion.bind("clip_x0", d.ddim.clip_x0);

    auto& t = c.training;
    s.training.bind("steps", t.steps);
    s.training.bind("batch_size", t.batch_size);
    s.training.bind("t0", t.ctrl.t0);
    s.training.bind("t1", t.ctrl.t1);
    s.training.bind("lambda", t.ctrl.lambda_max);
    s.training.bind("lr", t.optim.lr);
    s.training.bind("beta1", t.optim.beta1);
    s.training.bind("beta2", t.optim.beta2);
    s.training.bind("adam_eps", t.optim.eps);
    s.training.bind("weight_decay", t.optim.weight_decay);
    s.training.bind("grad_clip", t.optim.grad_clip);
    s.training.bind_custom(
        "fg_loss_region", [&t] { return json(to_string(t.fg_loss_region)); },
        [&t](const json& j) { t.fg_loss_region = parse_region_mode(j.get<std::string>()); });
    s.training.bind("use_region_loss", t.use_region_loss);
    s.training.bind("beta_b", t.beta_b);
    s.training.bind("beta_g", t.beta_g);
    s.training.bind("protect_bg", t.protect_bg);
    s.training.bind("crop", t.augment.crop);
    s.training.bind("flip_prob", t.augment.flip_prob);
    s.training.bind("max_dilation", t.augment.max_dilation);
    s.training.bind("checkpoint_every", t.checkpoint_every);

    auto& a = c.data;
    s.data.bind("size", a.size);
    s.data.bind("min_instances", a.min_instances);
    s.data.bind("max_instances", a.max_instances);
    s.data.bind("occlusion_prob", a.occlusion_prob);
    s.data.bind("texture_amplitude", a.texture_amplitude);
    return s;
}

}  // namespace

std::string config_to_json(const AppConfig& cfg) {
    AppConfig copy = cfg;
    const Schema s = bind_all(copy);
    const json j = {{"model", s.model.dump()},
                    {"diffusion", s.diffusion.dump()},
                    {"training", s.training.dump()},
                    {"data", s.data.dump()}};
    return j.dump(2);
}

AppConfig config_from_json(const std::string& text, const AppConfig& base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    AppConfig cfg = base;
    const Schema s = bind_all(cfg);
    for (const auto& [key, value] : j.items()) {
        if (key == "model") {
            s.model.load(value, key);
        } else if (key == "diffusion") {
            s.diffusion.load(value, key);
        } else if (key == "training") {
            s.training.load(value, key);
        } else if (key == "data") {
            s.data.load(value, key);
        } else {
            throw ConfigError("unknown config section '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return config_from_json(buf.str());
}

}  // namespace layerdiff

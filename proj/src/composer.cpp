// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/composer.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "layerdiff/error.hpp"
#include "layerdiff/image_io.hpp"

namespace layerdiff {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor compose(const LayerSet& layers, const RemovalSet& remove) {
    layers.validate();
    const std::size_t n = layers.count();
    std::vector<bool> removed(n, false);
    for (std::size_t k : remove) {
        if (k >= n) {
            throw Error("removal index " + std::to_string(k + 1) + " is out of range for " + std::to_string(n) +
                        " layers");
        }
        removed[k] = true;
    }
    Tensor out = layers.background;
    const std::size_t hw = layers.masks.height() * layers.masks.width();
    const std::size_t channels = out.dim(0);
    for (std::size_t k : layers.masks.paint_order()) {
        if (removed[k]) continue;
        const Tensor& m = layers.masks.masks[k];
        const Tensor& layer = layers.layers[k];
        for (std::size_t i = 0; i < hw; ++i) {
            if (m[i] == 0.0) continue;
            for (std::size_t c = 0; c < channels; ++c) out[c * hw + i] = layer[c * hw + i];
        }
    }
    return out;
}

RemovalSet parse_removal(const std::string& text, std::size_t n) {
    RemovalSet out;
    if (text == "all") {
        for (std::size_t k = 0; k < n; ++k) out.push_back(k);
        return out;
    }
    if (text.empty() || text == "none") return out;
    std::stringstream in(text);
    for (std::string item; std::getline(in, item, ',');) {
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(item, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad removal index '" + item + "'");
        }
        if (used != item.size() || v < 1 || static_cast<std::size_t>(v) > n) {
            throw ConfigError("removal index '" + item + "' must be in 1.." + std::to_string(n));
        }
        const auto k = static_cast<std::size_t>(v - 1);
        if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    }
    return out;
}

LayerSet scene_layers(const SceneSample& sample) {
    LayerSet l;
    l.layers = sample.layers;
    l.background = sample.background;
    l.masks = sample.masks;
    return l;
}

ErasedScene erase(const SceneSample& sample, const RemovalSet& remove, const LayeredModel& model,
                  const NoiseSchedule& schedule, const DRng& rng, const DdimOptions& opts) {
    NoGradGuard no_grad;
    const PoseMap pose = render_pose_map(sample.keypoints, sample.size(), sample.size());
    const BranchConditions cond = build_conditions(model.encoder(), sample.prompt, pose, sample.parsing, sample.masks);
    ErasedScene out;
    out.layers = generate_layers(sample.masks, cond, model, schedule, rng, opts);
    out.image = compose(out.layers, remove);
    return out;
}

void write_layer_set(const LayerSet& layers, const fs::path& dir) {
    layers.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t k = 0; k < layers.count(); ++k) {
        write_png_rgb(dir / ("layer_" + std::to_string(k + 1) + ".png"), layers.layers[k]);
        write_png_mask(dir / ("mask_" + std::to_string(k + 1) + ".png"), layers.masks.masks[k]);
    }
    write_png_rgb(dir / "background.png", layers.background);
    const json meta = {{"count", layers.count()}, {"depth_order", layers.masks.paint_order()}};
    std::ofstream(dir / "layers.json") << meta.dump(2) << '\n';
}

LayerSet read_layer_set(const fs::path& dir) {
    const fs::path meta_path = dir / "layers.json";
    if (!fs::exists(meta_path)) throw DataError("missing layer index (" + meta_path.string() + ")");
    LayerSet l;
    std::size_t count = 0;
    try {
        std::ifstream in(meta_path);
        const json meta = json::parse(in);
        count = meta.at("count").get<std::size_t>();
        l.masks.depth_order = meta.at("depth_order").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw DataError("malformed layer index: " + std::string(e.what()));
    }
    auto need = [&](const std::string& name) {
        const fs::path p = dir / name;
        if (!fs::exists(p)) throw DataError("missing layer file " + p.string());
        return p;
    };
    for (std::size_t k = 0; k < count; ++k) {
        l.layers.push_back(read_png_rgb(need("layer_" + std::to_string(k + 1) + ".png")));
        l.masks.masks.push_back(read_png_mask(need("mask_" + std::to_string(k + 1) + ".png")));
    }
    l.background = read_png_rgb(need("background.png"));
    l.validate();
    return l;
}

}  // namespace layerdiff

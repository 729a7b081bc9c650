// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/scenes.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "layerdiff/error.hpp"
#include "layerdiff/image_io.hpp"

namespace layerdiff {

namespace fs = std::filesystem;
using nlohmann::json;

void SceneConfig::validate() const {
    if (size < 8) throw ConfigError("scene size must be at least 8");
    if (min_instances < 1 || min_instances > max_instances || max_instances > 4) {
        throw ConfigError("instance range must satisfy 1 <= min <= max <= 4");
    }
    if (occlusion_prob < 0.0 || occlusion_prob > 1.0) throw ConfigError("occlusion_prob must lie in [0, 1]");
    if (texture_amplitude < 0.0 || texture_amplitude > 0.5) {
        throw ConfigError("texture_amplitude must lie in [0, 0.5]");
    }
}

namespace {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct Figure {
    Skeleton joints;
    double head_radius = 1.0;
    double torso_half = 1.0;
    double limb_half = 0.75;
    std::array<std::array<double, 3>, 3> colors{};  // head, torso, limbs
};

double q255(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double segment_distance(Point p, Point a, Point b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

Point at(const Skeleton& s, Joint j) {
    const auto& k = s[static_cast<std::size_t>(j)];
    return {static_cast<double>(k.x), static_cast<double>(k.y)};
}

/// Part label per pixel of one figure (0 = not covered).
std::vector<std::uint8_t> rasterize(const Figure& f, std::size_t size) {
    std::vector<std::uint8_t> labels(size * size, 0);
    const Skeleton& s = f.joints;
    const std::array<std::pair<Joint, Joint>, 4> limbs{{{Joint::neck, Joint::left_hand},
                                                        {Joint::neck, Joint::right_hand},
                                                        {Joint::pelvis, Joint::left_foot},
                                                        {Joint::pelvis, Joint::right_foot}}};
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const Point p{static_cast<double>(x), static_cast<double>(y)};
            std::uint8_t label = 0;
            for (const auto& [a, b] : limbs)
                if (segment_distance(p, at(s, a), at(s, b)) <= f.limb_half) label = 3;
            if (segment_distance(p, at(s, Joint::neck), at(s, Joint::pelvis)) <= f.torso_half) label = 2;
            if (std::hypot(p.x - at(s, Joint::head).x, p.y - at(s, Joint::head).y) <= f.head_radius) label = 1;
            labels[y * size + x] = label;
        }
    return labels;
}

Figure random_figure(DRng& rng, std::size_t size) {
    const double s = static_cast<double>(size);
    const double height = s * (0.45 + 0.25 * rng.uniform());
    const double u = height / 10.0;
    const double reach = 2.5 * u;
    const double cx_lo = std::ceil(reach + 1.0), cx_hi = std::floor(s - 2.0 - reach);
    const double cx = cx_lo + std::floor(rng.uniform() * std::max(1.0, cx_hi - cx_lo + 1.0));
    const double y0 = std::floor(rng.uniform() * std::max(1.0, s - height - 1.0));

    auto jitter = [&](double amount) { return (rng.uniform() * 2.0 - 1.0) * amount; };
    auto place = [&](double x, double y) {
        const int xi = static_cast<int>(std::clamp(std::round(x), 0.0, s - 1.0));
        const int yi = static_cast<int>(std::clamp(std::round(y), 0.0, s - 1.0));
        return Keypoint{xi, yi, 1};
    };
    Figure f;
    auto& j = f.joints;
    j[static_cast<std::size_t>(Joint::head)] = place(cx, y0 + 1.2 * u);
    j[static_cast<std::size_t>(Joint::neck)] = place(cx, y0 + 2.6 * u);
    j[static_cast<std::size_t>(Joint::chest)] = place(cx, y0 + 4.0 * u);
    j[static_cast<std::size_t>(Joint::pelvis)] = place(cx, y0 + 6.0 * u);
    j[static_cast<std::size_t>(Joint::left_hand)] = place(cx - reach + jitter(0.5 * u), y0 + 5.0 * u + jitter(u));
    j[static_cast<std::size_t>(Joint::right_hand)] = place(cx + reach + jitter(0.5 * u), y0 + 5.0 * u + jitter(u));
    j[static_cast<std::size_t>(Joint::left_foot)] = place(cx - 1.5 * u + jitter(0.5 * u), y0 + 9.5 * u);
    j[static_cast<std::size_t>(Joint::right_foot)] = place(cx + 1.5 * u + jitter(0.5 * u), y0 + 9.5 * u);
    f.head_radius = std::max(1.0, 1.2 * u);
    f.torso_half = std::max(0.75, 0.8 * u);
    f.limb_half = std::max(0.75, 0.4 * u);
    for (auto& color : f.colors)
        for (double& c : color) c = q255(rng.uniform());
    return f;
}

Tensor random_background(DRng& rng, const SceneConfig& cfg) {
    const std::size_t n = cfg.size;
    std::array<double, 3> c0{}, c1{};
    for (std::size_t c = 0; c < 3; ++c) {
        c0[c] = 0.2 + 0.6 * rng.uniform();
        c1[c] = 0.2 + 0.6 * rng.uniform();
    }
    const double theta = 2.0 * M_PI * rng.uniform();
    const double dx = std::cos(theta), dy = std::sin(theta);
    const double extent = (std::abs(dx) + std::abs(dy)) * static_cast<double>(n - 1);
    const double offset = std::min(0.0, dx) * static_cast<double>(n - 1) + std::min(0.0, dy) * static_cast<double>(n - 1);
    Tensor bg({3, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double t = extent > 0.0 ? (dx * static_cast<double>(x) + dy * static_cast<double>(y) - offset) / extent : 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double noise = cfg.texture_amplitude * (2.0 * rng.uniform() - 1.0);
                bg.at(c, y, x) = q255(c0[c] + (c1[c] - c0[c]) * t + noise);
            }
        }
    return bg;
}

bool overlaps(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && b[i]) return true;
    return false;
}

void paint(Tensor& image, const std::vector<std::uint8_t>& labels, const Figure& f) {
    const std::size_t hw = labels.size();
    for (std::size_t i = 0; i < hw; ++i) {
        if (!labels[i]) continue;
        for (std::size_t c = 0; c < 3; ++c) image[c * hw + i] = f.colors[labels[i] - 1u][c];
    }
}

std::vector<int> random_prompt(DRng& rng, std::size_t n) {
    static const std::array<const char*, 2> verbs{"remove", "erase"};
    static const std::array<const char*, 4> counts{"one", "two", "three", "four"};
    static const std::array<const char*, 3> singular{"person", "figure", "human"};
    const std::string noun = n == 1 ? singular[static_cast<std::size_t>(rng.uniform_int(0, 2))] : "people";
    return {Vocabulary::id(verbs[static_cast<std::size_t>(rng.uniform_int(0, 1))]), Vocabulary::id("the"),
            Vocabulary::id(counts[n - 1]), Vocabulary::id(noun)};
}

}  // namespace

SceneSample generate_scene(DRng& rng, const SceneConfig& cfg) {
    cfg.validate();
    const std::size_t size = cfg.size;
    const std::size_t target = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(cfg.min_instances), static_cast<std::int64_t>(cfg.max_instances)));
    const bool occlusion = rng.bernoulli(cfg.occlusion_prob);

    SceneSample s;
    s.background = random_background(rng, cfg);

    std::vector<Figure> figures;
    std::vector<std::vector<std::uint8_t>> supports;
    constexpr int kAttempts = 200;
    for (std::size_t k = 0; k < target; ++k) {
        for (int attempt = 0; attempt < kAttempts; ++attempt) {
            Figure f = random_figure(rng, size);
            auto labels = rasterize(f, size);
            const bool clash = !occlusion && std::any_of(supports.begin(), supports.end(),
                                                        [&](const auto& other) { return overlaps(labels, other); });
            if (clash) continue;
            figures.push_back(f);
            supports.push_back(std::move(labels));
            break;
        }
    }

    const std::size_t n = figures.size();
    s.masks.depth_order.resize(n);
    std::iota(s.masks.depth_order.begin(), s.masks.depth_order.end(), std::size_t{0});
    if (occlusion) {
        for (std::size_t i = n; i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
            std::swap(s.masks.depth_order[i - 1], s.masks.depth_order[j]);
        }
    }

    s.composite = s.background;
    s.parsing = ParsingMap(size, size);
    for (std::size_t k = 0; k < n; ++k) {
        Tensor mask({size, size});
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = supports[k][i] ? 1.0 : 0.0;
        s.masks.masks.push_back(std::move(mask));
        Tensor layer = s.background;
        paint(layer, supports[k], figures[k]);
        s.layers.push_back(std::move(layer));
        s.keypoints.push_back(figures[k].joints);
    }
    for (std::size_t k : s.masks.depth_order) {
        paint(s.composite, supports[k], figures[k]);
        for (std::size_t i = 0; i < supports[k].size(); ++i)
            if (supports[k][i]) s.parsing.labels[i] = supports[k][i];
    }
    s.prompt = random_prompt(rng, n);
    return s;
}

PoseMap render_pose_map(std::span<const Skeleton> skeletons, std::size_t height, std::size_t width, double sigma) {
    if (sigma <= 0.0) throw Error("render_pose_map: sigma must be positive");
    PoseMap pose{Tensor({kKeypointCount, height, width})};
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (const auto& skeleton : skeletons)
        for (std::size_t j = 0; j < kKeypointCount; ++j) {
            const Keypoint& kp = skeleton[j];
            if (kp.visibility == 0) continue;
            for (std::size_t y = 0; y < height; ++y)
                for (std::size_t x = 0; x < width; ++x) {
                    const double dx = static_cast<double>(x) - kp.x, dy = static_cast<double>(y) - kp.y;
                    double& v = pose.heatmaps.at(j, y, x);
                    v = std::max(v, std::exp(-(dx * dx + dy * dy) * inv));
                }
        }
    return pose;
}

namespace {

Tensor crop_tensor(const Tensor& t, std::size_t y0, std::size_t x0, std::size_t c) {
    if (t.rank() == 2) {
        Tensor out({c, c});
        for (std::size_t y = 0; y < c; ++y)
            for (std::size_t x = 0; x < c; ++x) out.at(y, x) = t.at(y0 + y, x0 + x);
        return out;
    }
    Tensor out({t.dim(0), c, c});
    for (std::size_t ch = 0; ch < t.dim(0); ++ch)
        for (std::size_t y = 0; y < c; ++y)
            for (std::size_t x = 0; x < c; ++x) out.at(ch, y, x) = t.at(ch, y0 + y, x0 + x);
    return out;
}

Tensor flip_tensor(const Tensor& t) {
    Tensor out = t;
    const std::size_t w = t.shape().back(), rows = t.size() / w;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t x = 0; x < w; ++x) out[r * w + x] = t[r * w + (w - 1 - x)];
    return out;
}

SceneSample crop_sample(const SceneSample& s, std::size_t y0, std::size_t x0, std::size_t c) {
    SceneSample out = s;
    out.composite = crop_tensor(s.composite, y0, x0, c);
    out.background = crop_tensor(s.background, y0, x0, c);
    for (auto& l : out.layers) l = crop_tensor(l, y0, x0, c);
    for (auto& m : out.masks.masks) m = crop_tensor(m, y0, x0, c);
    out.parsing = ParsingMap(c, c);
    for (std::size_t y = 0; y < c; ++y)
        for (std::size_t x = 0; x < c; ++x) out.parsing.at(y, x) = s.parsing.at(y0 + y, x0 + x);
    for (auto& skeleton : out.keypoints)
        for (auto& kp : skeleton) {
            kp.x -= static_cast<int>(x0);
            kp.y -= static_cast<int>(y0);
            if (kp.x < 0 || kp.y < 0 || kp.x >= static_cast<int>(c) || kp.y >= static_cast<int>(c)) {
                kp = Keypoint{};
            }
        }
    return out;
}

}  // namespace

SceneSample flip_horizontal(const SceneSample& s) {
    SceneSample out = s;
    const int w = static_cast<int>(s.size());
    out.composite = flip_tensor(s.composite);
    out.background = flip_tensor(s.background);
    for (auto& l : out.layers) l = flip_tensor(l);
    for (auto& m : out.masks.masks) m = flip_tensor(m);
    for (std::size_t y = 0; y < s.parsing.height; ++y)
        for (std::size_t x = 0; x < s.parsing.width; ++x) out.parsing.at(y, x) = s.parsing.at(y, s.parsing.width - 1 - x);
    for (auto& skeleton : out.keypoints) {
        for (auto& kp : skeleton)
            if (kp.visibility) kp.x = w - 1 - kp.x;
        std::swap(skeleton[static_cast<std::size_t>(Joint::left_hand)], skeleton[static_cast<std::size_t>(Joint::right_hand)]);
        std::swap(skeleton[static_cast<std::size_t>(Joint::left_foot)], skeleton[static_cast<std::size_t>(Joint::right_foot)]);
    }
    return out;
}

SceneSample augment(const SceneSample& sample, DRng& rng, const AugmentConfig& cfg) {
    const std::size_t size = sample.size();
    if (cfg.crop > size) {
        throw Error("augment: crop " + std::to_string(cfg.crop) + " exceeds image size " + std::to_string(size));
    }
    SceneSample out = sample;
    if (cfg.crop > 0 && cfg.crop < size) {
        const auto span = static_cast<std::int64_t>(size - cfg.crop);
        const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, span));
        const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, span));
        out = crop_sample(out, y0, x0, cfg.crop);
    }
    if (cfg.flip_prob > 0.0 && rng.bernoulli(cfg.flip_prob)) out = flip_horizontal(out);
    if (cfg.max_dilation > 0) {
        for (auto& m : out.masks.masks) {
            const auto r = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.max_dilation)));
            if (r > 0) m = dilate(m, r);
        }
    }
    return out;
}

namespace {

std::string indexed_name(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%05zu%s", stem, i, ext);
    return buf;
}

std::string instance_name(const char* stem, std::size_t i, std::size_t k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%05zu_%zu.png", stem, i, k + 1);
    return buf;
}

fs::path require_file(const fs::path& dir, const std::string& name, std::size_t index, const char* field) {
    fs::path p = dir / name;
    if (!fs::exists(p)) {
        throw DataError("sample " + std::to_string(index) + ": missing " + field + " (" + p.string() + ")");
    }
    return p;
}

json scene_config_json(const SceneConfig& cfg) {
    return {{"size", cfg.size},
            {"min_instances", cfg.min_instances},
            {"max_instances", cfg.max_instances},
            {"occlusion_prob", cfg.occlusion_prob},
            {"texture_amplitude", cfg.texture_amplitude}};
}

}  // namespace

void write_dataset(std::span<const SceneSample> samples, const fs::path& dir, const SceneConfig& cfg,
                   std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SceneSample& s = samples[i];
        write_png_rgb(dir / indexed_name("composite", i, ".png"), s.composite);
        write_png_rgb(dir / indexed_name("background", i, ".png"), s.background);
        for (std::size_t k = 0; k < s.instance_count(); ++k) {
            write_png_mask(dir / instance_name("mask", i, k), s.masks.masks[k]);
            write_png_rgb(dir / instance_name("layer", i, k), s.layers.at(k));
        }
        json instances = json::array();
        for (const auto& skeleton : s.keypoints) {
            json joints = json::array();
            for (const auto& kp : skeleton) joints.push_back({kp.x, kp.y, kp.visibility});
            instances.push_back(std::move(joints));
        }
        const json pose = {{"depth_order", s.masks.depth_order}, {"instances", std::move(instances)}};
        std::ofstream(dir / indexed_name("pose", i, ".json")) << pose.dump() << '\n';
        write_png_indexed(dir / indexed_name("parsing", i, ".png"),
                          IndexedImage{s.parsing.height, s.parsing.width, s.parsing.labels}, kPartLabelCount);
        std::ofstream(dir / indexed_name("prompt", i, ".txt")) << Vocabulary::decode(s.prompt) << '\n';
    }
    const json manifest = {{"format", 1}, {"count", samples.size()}, {"seed", seed}, {"config", scene_config_json(cfg)}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
}

SceneSample read_sample(const fs::path& dir, std::size_t i) {
    SceneSample s;
    s.composite = read_png_rgb(require_file(dir, indexed_name("composite", i, ".png"), i, "composite"));
    s.background = read_png_rgb(require_file(dir, indexed_name("background", i, ".png"), i, "background"));

    json pose;
    try {
        std::ifstream in(require_file(dir, indexed_name("pose", i, ".json"), i, "pose"));
        pose = json::parse(in);
        for (const auto& joints : pose.at("instances")) {
            if (joints.size() != kKeypointCount) throw DataError("wrong keypoint count");
            Skeleton skeleton{};
            for (std::size_t j = 0; j < kKeypointCount; ++j) {
                skeleton[j] = Keypoint{joints[j].at(0).get<int>(), joints[j].at(1).get<int>(), joints[j].at(2).get<int>()};
            }
            s.keypoints.push_back(skeleton);
        }
        s.masks.depth_order = pose.at("depth_order").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw DataError("sample " + std::to_string(i) + ": malformed pose file: " + e.what());
    }

    for (std::size_t k = 0; k < s.keypoints.size(); ++k) {
        s.masks.masks.push_back(read_png_mask(require_file(dir, instance_name("mask", i, k), i, "mask")));
        s.layers.push_back(read_png_rgb(require_file(dir, instance_name("layer", i, k), i, "layer")));
    }
    if (s.masks.masks.empty()) throw DataError("sample " + std::to_string(i) + ": no instances");
    s.masks.validate();

    const IndexedImage parsing = read_png_indexed(require_file(dir, indexed_name("parsing", i, ".png"), i, "parsing"));
    s.parsing = ParsingMap(parsing.height, parsing.width);
    s.parsing.labels = parsing.indices;
    for (auto l : s.parsing.labels)
        if (l >= kPartLabelCount) throw DataError("sample " + std::to_string(i) + ": parsing label out of range");

    std::ifstream prompt(require_file(dir, indexed_name("prompt", i, ".txt"), i, "prompt"));
    std::string text;
    std::getline(prompt, text);
    s.prompt = Vocabulary::encode(text);

    const std::size_t n = s.size();
    if (s.background.shape() != s.composite.shape() || s.masks.height() != n || s.parsing.height != n) {
        throw DataError("sample " + std::to_string(i) + ": field extents disagree");
    }
    return s;
}

std::vector<SceneSample> read_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw DataError("missing manifest (" + manifest_path.string() + ")");
    std::size_t count = 0;
    try {
        std::ifstream in(manifest_path);
        count = json::parse(in).at("count").get<std::size_t>();
    } catch (const json::exception& e) {
        throw DataError("malformed manifest: " + std::string(e.what()));
    }
    std::vector<SceneSample> samples;
    samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) samples.push_back(read_sample(dir, i));
    return samples;
}

}  // namespace layerdiff

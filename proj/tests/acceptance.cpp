// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0
//
// Release gate: one PASS/FAIL line per criterion. Run everything, or a
// single criterion with --only N.

#include <CLI11.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "layerdiff/attention.hpp"
#include "layerdiff/cli.hpp"
#include "layerdiff/composer.hpp"
#include "layerdiff/config.hpp"
#include "layerdiff/metrics.hpp"
#include "layerdiff/selfcheck.hpp"
#include "layerdiff/training.hpp"

#ifndef LAYERDIFF_BIN
#error "LAYERDIFF_BIN must point at the layerdiff executable"
#endif

namespace fs = std::filesystem;
using namespace layerdiff;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("layerdiff_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "layerdiff");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 1. Biased attention with a zero bias reproduces plain attention bit for bit.
Outcome sma_zero_init() {
    DRng rng(101);
    const SpatialBias bias = SpatialBias::zeros();
    int identical = 0;
    for (int draw = 0; draw < 100; ++draw) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 64));
        const auto d = static_cast<std::size_t>(rng.uniform_int(1, 16));
        const Var q = constant(randn({n, d}, rng));
        const Var k = constant(randn({n, d}, rng));
        const Var v = constant(randn({n, d}, rng));
        TokenMask mask;
        const double p = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) mask.labels.push_back(rng.bernoulli(p) ? 1 : 0);
        identical += bit_equal(sma_attention(q, k, v, mask, bias).value(), vanilla_attention(q, k, v).value());
    }
    return {identical == 100, std::to_string(identical) + "/100 draws bit-identical"};
}

// 2. A fresh model (adapters and attention bias on) matches the bare UNet path exactly.
Outcome lora_zero_init() {
    const AppConfig cfg = default_config();
    LayeredModel model(cfg.model, 202);
    DRng rng(203);
    SceneConfig sc = cfg.data;
    DRng scene_rng = rng.split(1);
    const SceneSample scene = generate_scene(scene_rng, sc);
    const PoseMap pose = render_pose_map(scene.keypoints, scene.size(), scene.size());
    const BranchConditions cond = build_conditions(model.encoder(), scene.prompt, pose, scene.parsing, scene.masks);
    const Tensor u = union_mask(scene.masks);
    const std::size_t ls = cfg.model.latent_size();
    NoGradGuard guard;
    int identical = 0;
    for (Branch branch : {Branch::fg, Branch::bg}) {
        for (int draw = 0; draw < 20; ++draw) {
            BranchInput in;
            in.z_t = constant(randn({cfg.model.latent_channels(), ls, ls}, rng));
            in.t = static_cast<std::size_t>(rng.uniform_int(0, 999));
            in.branch = branch;
            const std::size_t k = static_cast<std::size_t>(draw) % scene.instance_count();
            in.condition = branch == Branch::fg ? &cond.fg[k] : &cond.bg;
            in.region = branch == Branch::fg ? &scene.masks.masks[k] : &u;
            const Tensor full = model.predict_noise(in).value();
            const Tensor base = model.predict_noise(in, ForwardOptions{false, false, true}).value();
            identical += bit_equal(full, base);
        }
    }
    return {identical == 40, std::to_string(identical) + "/40 calls (20 per branch) bit-identical"};
}

// 3. Reverse-mode gradients of the full training loss against central
// differences, computed here independently of the library's own probe.
Outcome gradient_oracle() {
    LayeredModel model(tiny_model_config(), 303);
    DRng perturb(304);
    randomize_zero_init(model, perturb);
    const SceneSample scene = tiny_scene(305);
    if (scene.instance_count() != 2 || scene.size() != 8) return {false, "fixture is not an 8x8 two-instance scene"};

    TrainConfig tc;
    tc.ctrl.t0 = 1;
    tc.ctrl.t1 = 3;
    tc.use_region_loss = true;
    const NoiseSchedule schedule = make_schedule(200);
    const std::size_t step = 7;
    const DRng loss_rng(306);
    auto loss_at = [&] {
        NoGradGuard g;
        DRng r = loss_rng;
        return sample_loss(scene, model, tc, schedule, step, r).total.item();
    };

    const ParameterSet params = model.parameters();
    std::vector<Tensor> analytic;
    {
        DRng r = loss_rng;
        analytic = grad(sample_loss(scene, model, tc, schedule, step, r).total, params.vars(), true);
    }

    auto family = [](const std::string& n) -> int {
        if (n.starts_with("lora.") && n.ends_with(".A")) return 0;
        if (n.starts_with("lora.") && n.ends_with(".B")) return 1;
        if (n.starts_with("lora.") && n.ends_with(".alpha")) return 2;
        if (n == "unet.attn.sma_alpha") return 3;
        if (n.starts_with("hmg.")) return 4;
        if (n.starts_with("offset.")) return 5;
        return 6;
    };
    std::vector<std::vector<std::size_t>> pools(7);
    for (std::size_t i = 0; i < params.size(); ++i) pools[family(params.items()[i].name)].push_back(i);

    DRng pick(307);
    double worst = 0.0;
    std::string worst_at;
    int sampled = 0;
    for (int n = 0; n < 50; ++n) {
        const auto& pool = pools[static_cast<std::size_t>(n % 7)];
        if (pool.empty()) return {false, "a parameter family is missing"};
        // Relative error means nothing for vanishing entries (the loss is in
        // the hundreds), so draw until the gradient is at least 1e-6.
        std::size_t which = 0, idx = 0;
        for (int tries = 0; tries < 64; ++tries) {
            which = pool[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
            idx = static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<std::int64_t>(params.items()[which].var.value().size()) - 1));
            if (std::abs(analytic[which][idx]) > 1e-6) break;
        }
        Var v = params.items()[which].var;
        double& slot = v.mutable_value()[idx];
        const double saved = slot;
        auto central = [&](double h) {
            slot = saved + h;
            const double up = loss_at();
            slot = saved - h;
            const double down = loss_at();
            slot = saved;
            return (up - down) / (2.0 * h);
        };
        // Richardson-extrapolated central difference: the h^2 error term
        // cancels, so h can sit well above the loss's rounding noise.
        const double h = 4e-3 * std::max(1.0, std::abs(saved));
        const double numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;
        const double a = analytic[which][idx];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        if (rel > worst) {
            worst = rel;
            worst_at = params.items()[which].name + "[" + std::to_string(idx) + "]";
        }
        ++sampled;
    }
    return {worst <= 1e-5, std::to_string(sampled) + " parameters, worst relative error " + fmt("%.2e", worst) +
                               " at " + worst_at};
}

// 4. lambda_t values and continuity, plus frozen foreground weights through t0.
Outcome lambda_schedule() {
    StageController ctrl;
    ctrl.t0 = 8000;
    ctrl.t1 = 12000;
    ctrl.lambda_max = 1.0;
    std::vector<std::string> bad;
    if (lambda_t(0, ctrl) != 0.0) bad.push_back("lambda(0)");
    if (lambda_t((ctrl.t0 + ctrl.t1) / 2, ctrl) != ctrl.lambda_max / 2) bad.push_back("lambda(mid)");
    if (lambda_t(ctrl.t1 + 1, ctrl) != ctrl.lambda_max) bad.push_back("lambda(t1+1)");
    // The ramp is linear, so neighbouring steps differ by lambda / (t1 - t0);
    // continuity means the one-sided limits at t0 and t1 coincide.
    const double slope = ctrl.lambda_max / static_cast<double>(ctrl.t1 - ctrl.t0);
    const double left_t0 = lambda_t(ctrl.t0 - 1, ctrl), at_t0 = lambda_t(ctrl.t0, ctrl);
    const double right_t0 = lambda_t(ctrl.t0 + 1, ctrl) - slope;
    if (std::abs(left_t0 - at_t0) > 1e-12 || std::abs(right_t0 - at_t0) > 1e-12) bad.push_back("continuity at t0");
    const double left_t1 = lambda_t(ctrl.t1 - 1, ctrl) + slope, at_t1 = lambda_t(ctrl.t1, ctrl);
    if (std::abs(left_t1 - at_t1) > 1e-12 || std::abs(lambda_t(ctrl.t1 + 1, ctrl) - at_t1) > 1e-12) {
        bad.push_back("continuity at t1");
    }

    AppConfig cfg = toy_config();
    cfg.training.ctrl.t0 = 6;
    cfg.training.ctrl.t1 = 10;
    std::vector<SceneSample> data;
    for (std::uint64_t i = 0; i < 8; ++i) {
        DRng r = DRng(404).split(i);
        data.push_back(generate_scene(r, cfg.data));
    }
    LayeredModel model(cfg.model, 405);
    const ParameterSet fg = model.foreground_parameters();
    std::vector<Tensor> before;
    for (const auto& p : fg.items()) before.push_back(p.var.value());
    Trainer trainer(model, data, cfg.training, cfg.diffusion.schedule(), 406);
    const ParameterSet all = model.parameters();
    std::vector<Tensor> all_before;
    for (const auto& p : all.items()) all_before.push_back(p.var.value());
    while (trainer.steps_done() <= cfg.training.ctrl.t0) trainer.step();  // steps 0..t0
    std::size_t changed = 0;
    for (std::size_t i = 0; i < fg.size(); ++i) changed += !bit_equal(before[i], fg.items()[i].var.value());
    std::size_t others_moved = 0;
    for (std::size_t i = 0; i < all.size(); ++i) others_moved += !bit_equal(all_before[i], all.items()[i].var.value());
    if (changed != 0) bad.push_back(std::to_string(changed) + " foreground tensors moved before t0");
    if (others_moved == 0) bad.push_back("nothing trained during the background stage");
    trainer.step();
    trainer.step();
    std::size_t after_ramp = 0;
    for (std::size_t i = 0; i < fg.size(); ++i) after_ramp += !bit_equal(before[i], fg.items()[i].var.value());
    if (after_ramp == 0) bad.push_back("foreground weights never train after t0");

    if (!bad.empty()) {
        std::string d;
        for (const auto& b : bad) d += (d.empty() ? "" : "; ") + b;
        return {false, d};
    }
    return {true, "0, lambda/2, lambda exact; continuous at t0/t1; " + std::to_string(fg.size()) +
                      " foreground tensors unchanged through step t0, " + std::to_string(after_ramp) +
                      " move once the ramp starts"};
}

// 5. Recomposition of ground-truth layers.
Outcome composition() {
    SceneConfig disjoint;
    disjoint.size = 32;
    disjoint.occlusion_prob = 0.0;
    int exact = 0;
    for (std::uint64_t i = 0; i < 50; ++i) {
        DRng r = DRng(505).split(i);
        const SceneSample s = generate_scene(r, disjoint);
        const Tensor u = union_mask(s.masks);
        if (mask_area(u) != [&] {
                double a = 0;
                for (const auto& m : s.masks.masks) a += mask_area(m);
                return a;
            }()) {
            return {false, "scene " + std::to_string(i) + " has overlapping masks despite occlusion off"};
        }
        const LayerSet layers = scene_layers(s);
        RemovalSet all(s.instance_count());
        for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
        exact += bit_equal(compose(layers, {}), s.composite) && bit_equal(compose(layers, all), s.background);
    }

    SceneConfig overlap;
    overlap.size = 32;
    overlap.min_instances = 2;
    overlap.max_instances = 3;
    overlap.occlusion_prob = 1.0;
    int subsets = 0, subset_ok = 0, overlapping = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        DRng r = DRng(506).split(i);
        const SceneSample s = generate_scene(r, overlap);
        const std::size_t n = s.instance_count();
        const std::size_t hw = s.size() * s.size();
        const std::vector<std::size_t> order = s.masks.paint_order();
        bool has_overlap = false;
        for (std::size_t px = 0; px < hw; ++px) {
            int cover = 0;
            for (const auto& m : s.masks.masks) cover += m[px] == 1.0;
            has_overlap |= cover > 1;
        }
        overlapping += has_overlap;
        const LayerSet layers = scene_layers(s);
        for (unsigned bits = 0; bits < (1u << n); ++bits) {
            RemovalSet remove;
            for (std::size_t k = 0; k < n; ++k)
                if (bits & (1u << k)) remove.push_back(k);
            const Tensor got = compose(layers, remove);
            bool ok = true;
            for (std::size_t px = 0; px < hw && ok; ++px) {
                // Front-most kept instance covering the pixel, else background.
                const Tensor* src = &s.background;
                for (auto it = order.rbegin(); it != order.rend(); ++it) {
                    if (!(bits & (1u << *it)) && s.masks.masks[*it][px] == 1.0) {
                        src = &s.layers[*it];
                        break;
                    }
                }
                for (std::size_t c = 0; c < 3; ++c) ok &= got[c * hw + px] == (*src)[c * hw + px];
            }
            ++subsets;
            subset_ok += ok;
        }
    }
    const bool passed = exact == 50 && subset_ok == subsets && overlapping > 0;
    return {passed, std::to_string(exact) + "/50 disjoint scenes exact for R=none and R=all; " +
                        std::to_string(subset_ok) + "/" + std::to_string(subsets) + " removal subsets over " +
                        std::to_string(overlapping) + " overlapping scenes match painter's order"};
}

// 6. Forward-noising algebra and one-step DDIM inversion.
Outcome diffusion_algebra() {
    DRng rng(606);
    const Tensor z0 = randn({12, 8, 8}, rng), eps = randn({12, 8, 8}, rng);
    std::vector<std::string> bad;
    if (!bit_equal(add_noise_abar(z0, 1.0, eps), z0)) bad.push_back("abar=1 endpoint");
    if (!bit_equal(add_noise_abar(z0, 0.0, eps), eps)) bad.push_back("abar=0 endpoint");

    const NoiseSchedule schedule = make_schedule();
    const std::size_t n = 10000;
    const Tensor a = randn({n}, rng), b = randn({n}, rng);
    const std::size_t t = 500;
    const Tensor zt = add_noise(a, t, b, schedule);
    double mean = 0.0, var = 0.0;
    for (double v : zt.data()) mean += v / static_cast<double>(n);
    for (double v : zt.data()) var += (v - mean) * (v - mean) / static_cast<double>(n - 1);
    const double sigma = std::sqrt(2.0 / static_cast<double>(n - 1));  // sd of the sample variance
    if (std::abs(var - 1.0) > 3.0 * sigma) bad.push_back("variance " + fmt("%.4f", var));

    double worst = 0.0;
    for (std::size_t t0 : {std::size_t{0}, std::size_t{250}, std::size_t{999}}) {
        const Tensor noisy = add_noise(z0, t0, eps, schedule);
        const EpsModel oracle = [&](const Tensor&, std::size_t) { return eps; };
        NoiseSchedule truncated;
        truncated.beta.assign(schedule.beta.begin(), schedule.beta.begin() + static_cast<long>(t0 + 1));
        truncated.alpha.assign(schedule.alpha.begin(), schedule.alpha.begin() + static_cast<long>(t0 + 1));
        truncated.alpha_bar.assign(schedule.alpha_bar.begin(), schedule.alpha_bar.begin() + static_cast<long>(t0 + 1));
        const Tensor back = ddim_sample_from(oracle, truncated, noisy, DdimOptions{1, 0.0});
        for (std::size_t i = 0; i < z0.size(); ++i) worst = std::max(worst, std::abs(back[i] - z0[i]));
    }
    if (worst > 1e-10) bad.push_back("DDIM inversion error " + fmt("%.2e", worst));
    if (!bad.empty()) {
        std::string d;
        for (const auto& x : bad) d += (d.empty() ? "" : "; ") + x;
        return {false, d};
    }
    return {true, "endpoints exact; Var(z_t) = " + fmt("%.4f", var) + " (3 sd = " + fmt("%.4f", 3 * sigma) +
                      "); one-step inversion error " + fmt("%.1e", worst)};
}

// 7. Training is reproducible, including across a resume.
Outcome determinism() {
    const fs::path dir = scratch_dir("determinism");
    const std::string data = (dir / "data").string();
    if (cli({"gen-data", "--out", data, "--count", "24", "--size", "16", "--seed", "7"}) != 0) {
        return {false, "gen-data failed"};
    }
    const std::string config = (dir / "toy.json").string();
    {
        std::ofstream f(config);
        f << config_to_json(toy_config());
    }
    auto train = [&](const std::string& out, const std::string& steps, const std::string& resume) {
        std::vector<std::string> args = {"train", "--data", data, "--out", (dir / out).string(), "--steps", steps};
        if (resume.empty()) {
            args.insert(args.end(), {"--config", config, "--seed", "77"});
        } else {
            args.insert(args.end(), {"--resume", resume});
        }
        return cli(args);
    };
    if (train("a", "50", "") != 0 || train("b", "50", "") != 0) return {false, "training run failed"};
    if (train("c", "25", "") != 0) return {false, "25-step run failed"};
    if (train("d", "50", (dir / "c" / "final.ckpt").string()) != 0) return {false, "resume failed"};
    const std::string a = slurp(dir / "a" / "final.ckpt");
    const std::string b = slurp(dir / "b" / "final.ckpt");
    const std::string d = slurp(dir / "d" / "final.ckpt");
    const bool repeat = !a.empty() && a == b;
    const bool resumed = a == d;
    fs::remove_all(dir);
    return {repeat && resumed, std::string("repeat run ") + (repeat ? "byte-identical" : "differs") +
                                   ", resume at 25 " + (resumed ? "byte-identical" : "differs") + " (" +
                                   std::to_string(a.size()) + " bytes)"};
}

// 8. Scaled-down training run over five seeds.
Outcome training_smoke() {
    int good = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const AppConfig cfg = toy_config();
        const NoiseSchedule schedule = cfg.diffusion.schedule();
        std::vector<SceneSample> train, held;
        const DRng root(1000 + seed);
        for (std::uint64_t i = 0; i < 500; ++i) {
            DRng r = root.split(i);
            train.push_back(generate_scene(r, cfg.data));
        }
        for (std::uint64_t i = 0; i < 50; ++i) {
            DRng r = root.split(1'000'000 + i);
            held.push_back(generate_scene(r, cfg.data));
        }
        LayeredModel model(cfg.model, seed);
        auto held_out_psnr = [&] {
            double total = 0.0;
            for (std::size_t i = 0; i < held.size(); ++i) {
                RemovalSet all(held[i].instance_count());
                for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
                const ErasedScene e = erase(held[i], all, model, schedule, DRng(seed).split(i), cfg.diffusion.ddim);
                total += masked_psnr(e.image, held[i].background, union_mask(held[i].masks));
            }
            return total / static_cast<double>(held.size());
        };
        const double untrained = held_out_psnr();
        Trainer trainer(model, train, cfg.training, schedule, seed);
        std::vector<double> bg;
        while (trainer.steps_done() < cfg.training.steps) bg.push_back(trainer.step().bg_loss);
        double first = 0.0, last = 0.0;
        for (std::size_t i = 0; i < 50; ++i) {
            first += bg[i] / 50.0;
            last += bg[bg.size() - 50 + i] / 50.0;
        }
        const double trained = held_out_psnr();
        const double drop = 1.0 - last / first;
        const bool ok = drop >= 0.5 && trained - untrained >= 3.0;
        good += ok;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": loss -" +
                  fmt("%.0f%%", 100 * drop) + ", PSNR " + fmt("%.2f", untrained) + "->" + fmt("%.2f", trained) +
                  " dB" + (ok ? "" : " (miss)");
    }
    return {good >= 4, std::to_string(good) + "/5 seeds pass [" + detail + "]"};
}

// 9. Metric identities.
Outcome metrics_sanity() {
    DRng rng(909);
    std::vector<std::string> bad;
    Tensor x({3, 24, 24});
    for (double& v : x.data()) v = rng.uniform();
    const double s = ssim(x, x);
    if (std::abs(s - 1.0) > 1e-9) bad.push_back("ssim(x,x) = " + fmt("%.12f", s));
    const Tensor zeros({3, 8, 8}), ones({3, 8, 8}, 1.0);
    const double p = psnr(zeros, ones, 1.0);
    if (p != 0.0) bad.push_back("psnr at MSE = max^2 is " + fmt("%.17g", p));
    Tensor big({3, 8, 8}, 4.0);
    if (psnr(zeros, big, 4.0) != 0.0) bad.push_back("psnr(max=4)");

    int independent = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor a({3, 16, 16}), b({3, 16, 16}), m({16, 16});
        for (double& v : a.data()) v = rng.uniform();
        for (double& v : b.data()) v = rng.uniform();
        for (double& v : m.data()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
        m[static_cast<std::size_t>(rng.uniform_int(0, 255))] = 1.0;
        const double before = masked_mse(a, b, m);
        Tensor a2 = a, b2 = b;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 256; ++i)
                if (m[i] == 0.0) {
                    a2[c * 256 + i] = rng.uniform() * 10.0;
                    b2[c * 256 + i] = -rng.uniform();
                }
        independent += masked_mse(a2, b2, m) == before;
    }
    if (independent != 50) bad.push_back(std::to_string(50 - independent) + " perturbations changed masked_mse");
    if (!bad.empty()) {
        std::string d;
        for (const auto& e : bad) d += (d.empty() ? "" : "; ") + e;
        return {false, d};
    }
    return {true, "ssim(x,x)-1 = " + fmt("%.1e", s - 1.0) + "; psnr(MSE=max^2) = 0 dB; masked_mse unchanged under " +
                      "50 out-of-mask perturbations"};
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string(LAYERDIFF_BIN) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 10. The shipped selfcheck passes clean and catches both planted faults.
Outcome selfcheck_gate() {
    const int clean = run_binary("selfcheck");
    const int sma = run_binary("selfcheck --inject-fault nonzero-sma-init");
    const int clamp = run_binary("selfcheck --inject-fault broken-clamp");
    return {clean == 0 && sma == 3 && clamp == 3, "exit codes: clean " + std::to_string(clean) +
                                                      ", nonzero-sma-init " + std::to_string(sma) +
                                                      ", broken-clamp " + std::to_string(clamp)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layerdiff acceptance criteria"};
    int only = 0;
    app.add_option("--only", only, "Run a single criterion (1-10)")->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria = {
        {1, "sma_zero_init", 5, sma_zero_init},
        {2, "lora_zero_init", 10, lora_zero_init},
        {3, "gradient_oracle", 120, gradient_oracle},
        {4, "lambda_schedule", 60, lambda_schedule},
        {5, "composition", 30, composition},
        {6, "diffusion_algebra", 30, diffusion_algebra},
        {7, "determinism", 300, determinism},
        {8, "training_smoke", 900, training_smoke},
        {9, "metrics_sanity", 10, metrics_sanity},
        {10, "selfcheck", 60, selfcheck_gate},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = secs <= c.budget_seconds;
        const bool pass = o.passed && in_budget;
        failures += !pass;
        std::printf("criterion %2d [%s] %s: %s (%.2f s of %.0f s budget%s)\n", c.id, c.name.c_str(),
                    pass ? "PASS" : "FAIL", o.detail.c_str(), secs, c.budget_seconds,
                    in_budget ? "" : ", over budget");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "layerdiff/attention.hpp"
#include "layerdiff/composer.hpp"
#include "layerdiff/error.hpp"

namespace layerdiff {

bool SelfCheckReport::passed() const {
    return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; });
}

DenoiserConfig tiny_model_config() {
    DenoiserConfig c;
    c.image_size = 8;
    c.widths = {8, 16};
    c.groups = 4;
    c.heads = 2;
    c.d_cond = 16;
    c.encoder_channels = {8, 16};
    c.lora.rank = 4;
    c.boundary_smoothing = true;
    return c;
}

SceneSample tiny_scene(std::uint64_t seed) {
    SceneConfig sc;
    sc.size = 8;
    sc.min_instances = 2;
    sc.max_instances = 2;
    sc.texture_amplitude = 0.05;
    DRng rng(seed);
    return generate_scene(rng, sc);
}

void randomize_zero_init(LayeredModel& model, DRng& rng) {
    const ParameterSet params = model.parameters();
    for (const auto& p : params.items()) {
        const bool zero_init = p.name == "offset.weight" || p.name == "unet.attn.sma_alpha" ||
                               (p.name.rfind("lora.", 0) == 0 && p.name.ends_with(".B"));
        if (!zero_init) continue;
        Var v = p.var;
        for (double& x : v.mutable_value().data()) x = 0.05 * rng.normal();
    }
}

namespace {

using Clock = std::chrono::steady_clock;

std::string family_of(const std::string& name) {
    if (name.rfind("lora.", 0) == 0) {
        if (name.ends_with(".A")) return "lora.A";
        if (name.ends_with(".B")) return "lora.B";
        return "lora.alpha";
    }
    if (name == "unet.attn.sma_alpha") return "sma_alpha";
    if (name.rfind("hmg.", 0) == 0) return "hmg";
    if (name.rfind("offset.", 0) == 0) return "offset";
    return "unet";
}

SuiteResult timed(const std::string& name, const std::function<void(SuiteResult&)>& body) {
    SuiteResult r;
    r.name = name;
    const auto start = Clock::now();
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

std::vector<GradientProbe> gradient_probes(std::size_t count, std::uint64_t seed, double step_size) {
    DRng rng(seed);
    LayeredModel model(tiny_model_config(), seed);
    DRng perturb = rng.split(1);
    randomize_zero_init(model, perturb);
    const SceneSample scene = tiny_scene(seed);

    TrainConfig cfg;
    cfg.ctrl.t0 = 2;
    cfg.ctrl.t1 = 4;
    cfg.use_region_loss = true;
    const std::size_t step = 10;
    const NoiseSchedule schedule = make_schedule(100);
    const DRng loss_rng = rng.split(2);

    auto loss_value = [&] {
        NoGradGuard guard;
        DRng r = loss_rng;
        return sample_loss(scene, model, cfg, schedule, step, r).total.item();
    };

    const ParameterSet params = model.parameters();
    std::vector<Tensor> analytic;
    {
        DRng r = loss_rng;
        const Var loss = sample_loss(scene, model, cfg, schedule, step, r).total;
        analytic = grad(loss, params.vars(), /*allow_unused=*/true);
    }

    const std::vector<std::string> families = {"lora.A", "lora.B", "lora.alpha", "sma_alpha", "hmg", "offset", "unet"};
    std::vector<std::vector<std::size_t>> members(families.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto f = std::find(families.begin(), families.end(), family_of(params.items()[i].name));
        members[static_cast<std::size_t>(f - families.begin())].push_back(i);
    }

    DRng pick = rng.split(3);
    std::vector<GradientProbe> probes;
    for (std::size_t n = 0; n < count; ++n) {
        const auto& pool = members[n % families.size()];
        std::size_t which = 0, index = 0;
        // Relative error is meaningless for vanishing entries such as unused
        // embedding rows, so draw until the gradient is at least 1e-6.
        for (int attempt = 0; attempt < 32; ++attempt) {
            which = pool[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(pool.size() - 1)))];
            index = static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<std::int64_t>(params.items()[which].var.value().size() - 1)));
            if (std::abs(analytic[which][index]) > 1e-6) break;
        }
        Var v = params.items()[which].var;
        double& slot = v.mutable_value()[index];
        const double saved = slot;
        // Richardson extrapolation of two central differences cancels the
        // h^2 term, so a step large enough to stay clear of rounding noise
        // still resolves strongly curved directions.
        auto central = [&](double h) {
            slot = saved + h;
            const double up = loss_value();
            slot = saved - h;
            const double down = loss_value();
            slot = saved;
            return (up - down) / (2.0 * h);
        };
        const double h = step_size * std::max(1.0, std::abs(saved));
        const double numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;

        GradientProbe p;
        p.param = params.items()[which].name;
        p.index = index;
        p.analytic = analytic[which][index];
        p.numeric = numeric;
        const double scale = std::max({std::abs(p.analytic), std::abs(p.numeric), 1e-6});
        p.rel_error = std::abs(p.analytic - p.numeric) / scale;
        probes.push_back(p);
    }
    return probes;
}

SuiteResult check_gradients(std::uint64_t seed) {
    return timed("gradient-oracle", [&](SuiteResult& r) {
        const auto probes = gradient_probes(21, seed);
        const auto worst = std::max_element(probes.begin(), probes.end(), [](const auto& a, const auto& b) {
            return a.rel_error < b.rel_error;
        });
        r.passed = worst->rel_error <= 1e-5;
        std::ostringstream os;
        os << probes.size() << " probes, worst relative error " << worst->rel_error << " at " << worst->param << "["
           << worst->index << "]";
        r.detail = os.str();
    });
}

SuiteResult check_zero_init(std::uint64_t seed) {
    return timed("zero-init-equivalence", [&](SuiteResult& r) {
        DRng rng(seed);
        const SpatialBias bias = SpatialBias::zeros();
        std::size_t attention_mismatch = 0;
        for (int draw = 0; draw < 20; ++draw) {
            const auto n = static_cast<std::size_t>(rng.uniform_int(1, 12));
            const auto d = static_cast<std::size_t>(rng.uniform_int(1, 8));
            const Var q = constant(randn({n, d}, rng)), k = constant(randn({n, d}, rng)), v = constant(randn({n, d}, rng));
            TokenMask mask;
            for (std::size_t i = 0; i < n; ++i) mask.labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
            if (!bit_equal(sma_attention(q, k, v, mask, bias).value(), vanilla_attention(q, k, v).value())) {
                ++attention_mismatch;
            }
        }

        LayeredModel model(tiny_model_config(), seed);
        const SceneSample scene = tiny_scene(seed + 1);
        const DenoiserConfig& cfg = model.config();
        const std::size_t ls = cfg.latent_size();
        const PoseMap pose = render_pose_map(scene.keypoints, scene.size(), scene.size());
        const BranchConditions cond = build_conditions(model.encoder(), scene.prompt, pose, scene.parsing, scene.masks);
        const Tensor u = union_mask(scene.masks);
        std::size_t model_mismatch = 0;
        NoGradGuard guard;
        for (int draw = 0; draw < 4; ++draw) {
            for (Branch branch : {Branch::fg, Branch::bg}) {
                BranchInput in;
                in.z_t = constant(randn({cfg.latent_channels(), ls, ls}, rng));
                in.t = static_cast<std::size_t>(rng.uniform_int(0, 999));
                in.branch = branch;
                in.condition = branch == Branch::fg ? &cond.fg[0] : &cond.bg;
                in.region = branch == Branch::fg ? &scene.masks.masks[0] : &u;
                const Tensor full = model.predict_noise(in).value();
                const Tensor base = model.predict_noise(in, ForwardOptions{false, false, true}).value();
                if (!bit_equal(full, base)) ++model_mismatch;
            }
        }
        r.passed = attention_mismatch == 0 && model_mismatch == 0;
        r.detail = std::to_string(attention_mismatch) + "/20 attention draws and " + std::to_string(model_mismatch) +
                   "/8 denoiser calls differ from the unadapted path";
    });
}

SuiteResult check_schedule(std::uint64_t seed) {
    return timed("schedule", [&](SuiteResult& r) {
        std::vector<std::string> failures;
        StageController ctrl;
        ctrl.t0 = 100;
        ctrl.t1 = 300;
        ctrl.lambda_max = 0.8;
        if (lambda_t(0, ctrl) != 0.0) failures.push_back("lambda(0) != 0");
        if (lambda_t((ctrl.t0 + ctrl.t1) / 2, ctrl) != ctrl.lambda_max / 2) failures.push_back("lambda(mid) != max/2");
        if (lambda_t(ctrl.t1 + 1, ctrl) != ctrl.lambda_max) failures.push_back("lambda(t1+1) != max");
        if (std::abs(lambda_t(ctrl.t0, ctrl) - lambda_t(ctrl.t0 - 1, ctrl)) > 1e-12) failures.push_back("jump at t0");
        if (std::abs(lambda_t(ctrl.t1 + 1, ctrl) - lambda_t(ctrl.t1, ctrl)) > 1e-12) failures.push_back("jump at t1");
        if (ctrl.stage(ctrl.t0) != Stage::bg_only || ctrl.stage(ctrl.t0 + 1) != Stage::ramp ||
            ctrl.stage(ctrl.t1 + 1) != Stage::joint) {
            failures.push_back("stage boundaries");
        }

        DRng rng(seed);
        const Tensor z0 = randn({3, 4, 4}, rng), eps = randn({3, 4, 4}, rng);
        if (!bit_equal(add_noise_abar(z0, 1.0, eps), z0)) failures.push_back("add_noise(abar=1) != z0");
        if (!bit_equal(add_noise_abar(z0, 0.0, eps), eps)) failures.push_back("add_noise(abar=0) != eps");

        const NoiseSchedule schedule = make_schedule();
        const Tensor zt = add_noise(z0, schedule.steps() - 1, eps, schedule);
        const EpsModel oracle = [&](const Tensor&, std::size_t) { return eps; };
        const Tensor back = ddim_sample_from(oracle, schedule, zt, DdimOptions{1, 0.0});
        double err = 0.0;
        for (std::size_t i = 0; i < z0.size(); ++i) err = std::max(err, std::abs(back[i] - z0[i]));
        if (err > 1e-10) failures.push_back("DDIM oracle inversion error " + std::to_string(err));

        r.passed = failures.empty();
        if (r.passed) {
            r.detail = "lambda ramp, stage boundaries, noising endpoints and DDIM inversion hold";
        } else {
            for (const auto& f : failures) r.detail += (r.detail.empty() ? "" : "; ") + f;
        }
    });
}

SuiteResult check_composition(std::uint64_t seed) {
    return timed("composition", [&](SuiteResult& r) {
        std::vector<std::string> failures;
        DRng rng(seed);
        SceneConfig sc;
        sc.size = 16;
        sc.occlusion_prob = 0.0;
        for (int i = 0; i < 10; ++i) {
            DRng sub = rng.split(static_cast<std::uint64_t>(i));
            const SceneSample s = generate_scene(sub, sc);
            const LayerSet layers = scene_layers(s);
            RemovalSet all(s.instance_count());
            for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
            if (!bit_equal(compose(layers, {}), s.composite)) failures.push_back("scene " + std::to_string(i) + " R=none");
            if (!bit_equal(compose(layers, all), s.background)) failures.push_back("scene " + std::to_string(i) + " R=all");
        }

        // Three fully overlapping 2x2 masks: every pixel is covered by the two
        // other instances, so the context mask must saturate at exactly 1.
        MaskSet stack;
        for (int k = 0; k < 3; ++k) stack.masks.push_back(Tensor({2, 2}, std::vector<double>(4, 1.0)));
        for (std::size_t k = 0; k < 3; ++k) {
            const Tensor c = context_mask(stack, k);
            if (std::any_of(c.data().begin(), c.data().end(), [](double v) { return v != 1.0; })) {
                failures.push_back("context mask of instance " + std::to_string(k) + " leaves [0, 1]");
            }
        }

        // Overlapping 2x2 toy: each removal subset against the front-most
        // kept layer per pixel.
        LayerSet toy;
        toy.background = Tensor({3, 2, 2});
        const std::vector<std::vector<double>> m = {{1, 1, 0, 0}, {0, 1, 1, 0}, {0, 1, 0, 1}};
        for (std::size_t k = 0; k < 3; ++k) {
            toy.masks.masks.push_back(Tensor({2, 2}, m[k]));
            toy.layers.push_back(Tensor({3, 2, 2}, std::vector<double>(12, 0.25 * static_cast<double>(k + 1))));
        }
        toy.masks.depth_order = {2, 0, 1};
        for (unsigned subset = 0; subset < 8; ++subset) {
            RemovalSet remove;
            for (std::size_t k = 0; k < 3; ++k)
                if (subset & (1u << k)) remove.push_back(k);
            const Tensor got = compose(toy, remove);
            for (std::size_t px = 0; px < 4; ++px) {
                double want = 0.0;
                for (auto it = toy.masks.depth_order.rbegin(); it != toy.masks.depth_order.rend(); ++it) {
                    if (!(subset & (1u << *it)) && m[*it][px] == 1.0) {
                        want = 0.25 * static_cast<double>(*it + 1);
                        break;
                    }
                }
                for (std::size_t c = 0; c < 3; ++c)
                    if (got[c * 4 + px] != want) failures.push_back("subset " + std::to_string(subset));
            }
        }

        r.passed = failures.empty();
        r.detail = r.passed ? "10 scenes recompose exactly; context masks clamp; 8 removal subsets match painter's order"
                            : failures.front() + (failures.size() > 1 ? " (+" + std::to_string(failures.size() - 1) +
                                                                           " more)"
                                                                     : "");
    });
}

SelfCheckReport run_selfcheck(std::uint64_t seed) {
    SelfCheckReport report;
    report.suites.push_back(check_gradients(seed + 11));
    report.suites.push_back(check_zero_init(seed + 12));
    report.suites.push_back(check_schedule(seed + 13));
    report.suites.push_back(check_composition(seed + 14));
    return report;
}

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "layerdiff/composer.hpp"
#include "layerdiff/config.hpp"
#include "layerdiff/error.hpp"
#include "layerdiff/faults.hpp"
#include "layerdiff/image_io.hpp"
#include "layerdiff/metrics.hpp"
#include "layerdiff/selfcheck.hpp"
#include "layerdiff/training.hpp"

namespace layerdiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(std::ostream& out, const json& record) { out << record.dump() << '\n' << std::flush; }

AppConfig preset(const std::string& name) {
    if (name == "default") return default_config();
    if (name == "toy") return toy_config();
    throw ConfigError("unknown preset '" + name + "' (expected default or toy)");
}

AppConfig resolve_config(const std::string& path, const std::string& preset_name) {
    if (!path.empty()) {
        if (!fs::exists(path)) throw ConfigError("config file " + path + " does not exist");
        std::ifstream in(path);
        std::stringstream buf;
        buf << in.rdbuf();
        return config_from_json(buf.str(), preset(preset_name));
    }
    AppConfig cfg = preset(preset_name);
    cfg.validate();
    return cfg;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

struct Loaded {
    AppConfig cfg;
    Checkpoint ckpt;
};

Loaded load_model_checkpoint(const fs::path& path, LayeredModel& model) {
    Loaded l;
    l.ckpt = load_checkpoint(path);
    l.cfg = config_from_json(l.ckpt.config_json);
    model = LayeredModel(l.cfg.model, l.ckpt.seed);
    restore_checkpoint(l.ckpt, model);
    return l;
}

json removed_json(const RemovalSet& r) {
    json a = json::array();
    for (std::size_t k : r) a.push_back(k + 1);
    return a;
}

struct GenDataArgs {
    std::string out, config, preset = "default";
    std::size_t count = 100;
    std::optional<std::size_t> size, min_instances, max_instances;
    std::uint64_t seed = 0;
};

void cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    AppConfig cfg = resolve_config(a.config, a.preset);
    SceneConfig sc = cfg.data;
    if (a.size) sc.size = *a.size;
    if (a.min_instances) sc.min_instances = *a.min_instances;
    if (a.max_instances) sc.max_instances = *a.max_instances;
    if (sc.min_instances > sc.max_instances) sc.min_instances = sc.max_instances;
    sc.validate();
    if (sc.size % cfg.model.patch != 0) {
        throw ConfigError("image size " + std::to_string(sc.size) + " is not divisible by the patch size " +
                          std::to_string(cfg.model.patch));
    }
    if (a.count == 0) throw ConfigError("--count must be positive");
    std::vector<SceneSample> samples;
    samples.reserve(a.count);
    const DRng root(a.seed);
    for (std::size_t i = 0; i < a.count; ++i) {
        DRng rng = root.split(i);
        samples.push_back(generate_scene(rng, sc));
    }
    ensure_dir(a.out);
    write_dataset(samples, a.out, sc, a.seed);
    emit(out, {{"event", "gen-data"}, {"count", a.count}, {"size", sc.size}, {"seed", a.seed}, {"out", a.out}});
}

struct TrainArgs {
    std::string data, config, preset = "default", out, resume;
    std::optional<std::size_t> steps, checkpoint_every;
    std::optional<std::uint64_t> seed;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
    AppConfig cfg;
    std::optional<Checkpoint> resume;
    std::uint64_t seed = a.seed.value_or(0);
    if (!a.resume.empty()) {
        resume = load_checkpoint(a.resume);
        cfg = config_from_json(resume->config_json);
        if (a.seed && *a.seed != resume->seed) {
            throw ConfigError("--seed " + std::to_string(*a.seed) + " differs from the checkpoint's seed " +
                              std::to_string(resume->seed));
        }
        seed = resume->seed;
    } else {
        cfg = resolve_config(a.config, a.preset);
    }
    if (a.steps) cfg.training.steps = *a.steps;
    if (a.checkpoint_every) cfg.training.checkpoint_every = *a.checkpoint_every;
    cfg.validate();

    std::vector<SceneSample> data = read_dataset(a.data);
    if (data.empty()) throw DataError("dataset " + a.data + " is empty");
    if (data.front().size() != cfg.model.image_size) {
        throw DataError("dataset images are " + std::to_string(data.front().size()) + " pixels wide but the config "
                        "expects " + std::to_string(cfg.model.image_size));
    }

    LayeredModel model(cfg.model, seed);
    Trainer trainer(model, std::move(data), cfg.training, cfg.diffusion.schedule(), seed);
    if (resume) {
        if (resume->step > cfg.training.steps) {
            throw ConfigError("checkpoint is at step " + std::to_string(resume->step) + ", past --steps " +
                              std::to_string(cfg.training.steps));
        }
        OptimState optim = restore_checkpoint(*resume, model);
        trainer.restore(resume->step, std::move(optim));
    }

    ensure_dir(a.out);
    const std::string config_text = config_to_json(cfg);
    std::ofstream(fs::path(a.out) / "config.json") << config_text << '\n';
    emit(out, {{"event", "start"},
               {"seed", seed},
               {"steps", cfg.training.steps},
               {"from_step", trainer.steps_done()},
               {"parameters", model.parameters().scalar_count()}});

    auto save = [&](const fs::path& path) {
        save_checkpoint(make_checkpoint(model, trainer.optim(), trainer.steps_done(), seed, config_text), path);
        emit(out, {{"event", "checkpoint"}, {"step", trainer.steps_done()}, {"path", path.string()}});
    };

    std::optional<Stage> previous;
    if (trainer.steps_done() > 0) previous = cfg.training.ctrl.stage(trainer.steps_done() - 1);
    while (trainer.steps_done() < cfg.training.steps) {
        const StepReport r = trainer.step();
        if (previous && *previous != r.stage) {
            emit(out, {{"event", "stage"}, {"step", r.step}, {"from", to_string(*previous)}, {"to", to_string(r.stage)}});
        }
        previous = r.stage;
        emit(out, {{"step", r.step},
                   {"stage", to_string(r.stage)},
                   {"lambda", r.lambda},
                   {"bg_loss", r.bg_loss},
                   {"fg_loss", r.fg_loss},
                   {"loss", r.total}});
        const std::size_t every = cfg.training.checkpoint_every;
        if (every > 0 && trainer.steps_done() % every == 0 && trainer.steps_done() < cfg.training.steps) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06zu.ckpt", trainer.steps_done());
            save(fs::path(a.out) / name);
        }
    }
    save(fs::path(a.out) / "final.ckpt");
}

struct EraseArgs {
    std::string ckpt, sample, remove = "all", out;
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::optional<std::size_t> ddim_steps;
};

void cmd_erase(const EraseArgs& a, std::ostream& out) {
    LayeredModel model;
    Loaded l = load_model_checkpoint(a.ckpt, model);
    DdimOptions opts = l.cfg.diffusion.ddim;
    if (a.ddim_steps) opts.steps = *a.ddim_steps;
    const SceneSample sample = read_sample(a.sample, a.index);
    if (sample.size() != l.cfg.model.image_size) {
        throw DataError("sample is " + std::to_string(sample.size()) + " pixels wide but the model expects " +
                        std::to_string(l.cfg.model.image_size));
    }
    const RemovalSet remove = parse_removal(a.remove, sample.instance_count());
    const ErasedScene erased = erase(sample, remove, model, l.cfg.diffusion.schedule(), DRng(a.seed), opts);
    write_layer_set(erased.layers, a.out);
    write_png_rgb(fs::path(a.out) / "composite.png", erased.image);
    emit(out, {{"event", "erase"},
               {"instances", sample.instance_count()},
               {"removed", removed_json(remove)},
               {"seed", a.seed},
               {"ddim_steps", opts.steps},
               {"out", a.out}});
}

void cmd_compose(const std::string& layers_dir, const std::string& remove_text, const std::string& out_path,
                 std::ostream& out) {
    const LayerSet layers = read_layer_set(layers_dir);
    const RemovalSet remove = parse_removal(remove_text, layers.count());
    const fs::path target(out_path);
    if (target.has_parent_path()) ensure_dir(target.parent_path());
    write_png_rgb(target, compose(layers, remove));
    emit(out, {{"event", "compose"}, {"layers", layers.count()}, {"removed", removed_json(remove)}, {"out", out_path}});
}

void cmd_eval(const std::string& pred, const std::string& gt, const std::string& masks, const std::string& out_path,
              std::ostream& out) {
    const EvalReport report = eval_report(pred, gt, masks);
    const std::string text = report.to_json();
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        f << text << '\n';
        if (!f) throw DataError("cannot write " + out_path);
    }
    emit(out, json::parse(text));
}

int cmd_selfcheck(const std::string& fault, std::uint64_t seed, std::ostream& out) {
    inject_fault(parse_fault(fault));
    const SelfCheckReport report = run_selfcheck(seed);
    inject_fault(Fault::none);
    for (const auto& s : report.suites) {
        emit(out, {{"suite", s.name}, {"passed", s.passed}, {"seconds", s.seconds}, {"detail", s.detail}});
    }
    emit(out, {{"event", "selfcheck"}, {"passed", report.passed()}, {"suites", report.suites.size()}, {"fault", fault}});
    return report.passed() ? kExitOk : kExitVerification;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Layered diffusion toolkit: synthetic data, training, erasing and recomposition"};
    app.require_subcommand(0, 1);

    bool dump = false;
    std::string dump_config, dump_preset = "default";
    app.add_flag("--dump-config", dump, "Print the effective config as JSON and exit");
    app.add_option("--config", dump_config, "Config file for --dump-config");
    app.add_option("--preset", dump_preset, "Built-in defaults for --dump-config (default|toy)");

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--count", gen.count, "Number of scenes");
    gen_cmd->add_option("--size", gen.size, "Image extent in pixels");
    gen_cmd->add_option("--seed", gen.seed, "Random seed");
    gen_cmd->add_option("--min-instances", gen.min_instances, "Fewest figures per scene");
    gen_cmd->add_option("--max-instances", gen.max_instances, "Most figures per scene");
    gen_cmd->add_option("--config", gen.config, "Config file (data and model.patch sections)");
    gen_cmd->add_option("--preset", gen.preset, "Built-in defaults (default|toy)");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train a layered denoiser");
    train_cmd->add_option("--data", train.data, "Dataset directory")->required();
    train_cmd->add_option("--out", train.out, "Run directory for checkpoints")->required();
    train_cmd->add_option("--config", train.config, "Config file");
    train_cmd->add_option("--preset", train.preset, "Built-in defaults (default|toy)");
    train_cmd->add_option("--steps", train.steps, "Total optimizer steps (overrides training.steps)");
    train_cmd->add_option("--seed", train.seed, "Random seed");
    train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint");
    train_cmd->add_option("--checkpoint-every", train.checkpoint_every, "Checkpoint interval in steps");

    EraseArgs er;
    auto* erase_cmd = app.add_subcommand("erase", "Generate layers for a sample and remove instances");
    erase_cmd->add_option("--ckpt", er.ckpt, "Checkpoint file")->required();
    erase_cmd->add_option("--sample", er.sample, "Dataset directory holding the sample")->required();
    erase_cmd->add_option("--index", er.index, "Sample index in the dataset");
    erase_cmd->add_option("--remove", er.remove, "1-based instances to remove: '1,3', 'all' or 'none'");
    erase_cmd->add_option("--out", er.out, "Output directory")->required();
    erase_cmd->add_option("--seed", er.seed, "Sampling seed");
    erase_cmd->add_option("--ddim-steps", er.ddim_steps, "Override diffusion.ddim_steps");

    std::string layers_dir, compose_remove = "none", compose_out;
    auto* compose_cmd = app.add_subcommand("compose", "Recompose a saved layer directory");
    compose_cmd->add_option("--layers-dir", layers_dir, "Directory written by erase")->required();
    compose_cmd->add_option("--remove", compose_remove, "1-based instances to drop: '1,3', 'all' or 'none'");
    compose_cmd->add_option("--out", compose_out, "Output PNG")->required();

    std::string pred, gt, masks, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM/masked-MSE report over two image directories");
    eval_cmd->add_option("--pred", pred, "Predicted images")->required();
    eval_cmd->add_option("--gt", gt, "Ground-truth images")->required();
    eval_cmd->add_option("--masks", masks, "Optional same-named binary masks");
    eval_cmd->add_option("--out", eval_out, "Write the JSON report here as well");

    std::string fault = "none";
    std::uint64_t check_seed = 0;
    auto* check_cmd = app.add_subcommand("selfcheck", "Run the built-in verification suites");
    check_cmd->add_option("--inject-fault", fault, "Deliberate defect: nonzero-sma-init or broken-clamp");
    check_cmd->add_option("--seed", check_seed, "Seed offset for the suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (dump) {
            out << config_to_json(resolve_config(dump_config, dump_preset)) << '\n';
            return kExitOk;
        }
        if (*gen_cmd) {
            cmd_gen_data(gen, out);
        } else if (*train_cmd) {
            cmd_train(train, out);
        } else if (*erase_cmd) {
            cmd_erase(er, out);
        } else if (*compose_cmd) {
            cmd_compose(layers_dir, compose_remove, compose_out, out);
        } else if (*eval_cmd) {
            cmd_eval(pred, gt, masks, eval_out, out);
        } else if (*check_cmd) {
            return cmd_selfcheck(fault, check_seed, out);
        } else {
            err << app.help();
            return kExitUsage;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <json.hpp>
#include <sstream>

#include "layerdiff/cli.hpp"
#include "layerdiff/composer.hpp"
#include "layerdiff/config.hpp"
#include "layerdiff/error.hpp"
#include "layerdiff/faults.hpp"
#include "layerdiff/image_io.hpp"
#include "layerdiff/metrics.hpp"
#include "test_util.hpp"

namespace layerdiff {
namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "layerdiff");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

TEST(Config, JsonRoundTrip) {
    const AppConfig toy = toy_config();
    EXPECT_NO_THROW(toy.validate());
    const std::string text = config_to_json(toy);
    EXPECT_EQ(config_to_json(config_from_json(text)), text);

    const AppConfig partial = config_from_json(R"({"training": {"steps": 7}})", toy);
    EXPECT_EQ(partial.training.steps, 7u);
    EXPECT_EQ(partial.model.image_size, toy.model.image_size);
}

TEST(Config, Rejections) {
    EXPECT_THROW(config_from_json(R"({"training": {"stepz": 7}})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"optimizer": {}})"), ConfigError);
    EXPECT_THROW(config_from_json("{not json"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"data": {"size": 16}})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"model": {"codec": "jpeg"}})"), ConfigError);
    EXPECT_THROW(config_from_json(R"({"diffusion": {"ddim_steps": 5000}})"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(Faults, Parsing) {
    EXPECT_EQ(parse_fault("broken-clamp"), Fault::broken_clamp);
    EXPECT_EQ(parse_fault("nonzero-sma-init"), Fault::nonzero_sma_init);
    EXPECT_EQ(to_string(Fault::none), "none");
    EXPECT_THROW(parse_fault("gremlins"), ConfigError);
    EXPECT_EQ(active_fault(), Fault::none);
}

TEST(Cli, DumpConfigAndUsageErrors) {
    const CliResult dump = cli({"--preset", "toy", "--dump-config"});
    ASSERT_EQ(dump.code, kExitOk) << dump.err;
    EXPECT_EQ(nlohmann::json::parse(dump.out)["model"]["image_size"], 16);

    EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(cli({"gen-data"}).code, kExitUsage);
    EXPECT_EQ(cli({"selfcheck", "--inject-fault", "gremlins"}).code, kExitUsage);
}

TEST(Cli, GenDataComposeEval) {
    testing::TempDir dir("cli");
    const std::string data = (dir / "data").string();
    ASSERT_EQ(cli({"gen-data", "--out", data, "--count", "3", "--size", "16", "--seed", "4"}).code, kExitOk);
    EXPECT_TRUE(std::filesystem::exists(dir / "data" / "manifest.json"));
    EXPECT_EQ(cli({"gen-data", "--out", data, "--count", "1", "--size", "15"}).code, kExitUsage);

    // Ground-truth layers of sample 0 through the compose command.
    const SceneSample s = read_sample(dir / "data", 0);
    const LayerSet ls = scene_layers(s);
    write_layer_set(ls, dir / "layers");
    const std::string out = (dir / "composed.png").string();
    ASSERT_EQ(cli({"compose", "--layers-dir", (dir / "layers").string(), "--out", out}).code, kExitOk);
    EXPECT_EQ(read_png_rgb(out), s.composite);
    ASSERT_EQ(cli({"compose", "--layers-dir", (dir / "layers").string(), "--remove", "all", "--out", out}).code,
              kExitOk);
    EXPECT_EQ(read_png_rgb(out), s.background);
    const std::string too_many = std::to_string(s.instance_count() + 1);
    EXPECT_EQ(cli({"compose", "--layers-dir", (dir / "layers").string(), "--remove", too_many, "--out", out}).code,
              kExitUsage);
    EXPECT_EQ(cli({"compose", "--layers-dir", (dir / "nothing").string(), "--out", out}).code, kExitData);

    std::filesystem::create_directories(dir / "pred");
    std::filesystem::create_directories(dir / "gt");
    write_png_rgb(dir / "pred" / "x.png", s.composite);
    write_png_rgb(dir / "gt" / "x.png", s.composite);
    const std::string report = (dir / "report.json").string();
    ASSERT_EQ(cli({"eval", "--pred", (dir / "pred").string(), "--gt", (dir / "gt").string(), "--out", report}).code,
              kExitOk);
    std::ifstream in(report);
    EXPECT_EQ(nlohmann::json::parse(in)["aggregate"]["psnr"], kPsnrIdentical);
}

TEST(Cli, TrainAndErase) {
    testing::TempDir dir("cli_train");
    const std::string data = (dir / "data").string(), run = (dir / "run").string();
    ASSERT_EQ(cli({"gen-data", "--preset", "toy", "--out", data, "--count", "4", "--seed", "1"}).code, kExitOk);
    const CliResult train = cli({"train", "--preset", "toy", "--data", data, "--out", run, "--steps", "4",
                                 "--checkpoint-every", "2", "--seed", "3"});
    ASSERT_EQ(train.code, kExitOk) << train.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "final.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "step_000002.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "config.json"));
    std::istringstream lines(train.out);
    std::string line;
    std::size_t step_records = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("bg_loss")) ++step_records;
    }
    EXPECT_EQ(step_records, 4u);

    const std::string erased = (dir / "erased").string();
    const CliResult erase = cli({"erase", "--ckpt", (dir / "run" / "final.ckpt").string(), "--sample", data,
                                 "--index", "0", "--remove", "1", "--out", erased, "--ddim-steps", "3"});
    ASSERT_EQ(erase.code, kExitOk) << erase.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "erased" / "composite.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "erased" / "background.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "erased" / "layer_1.png"));

    EXPECT_EQ(cli({"train", "--data", data, "--out", run, "--resume", (dir / "run" / "final.ckpt").string(),
                   "--seed", "99"})
                  .code,
              kExitUsage);
}

}  // namespace
}  // namespace layerdiff

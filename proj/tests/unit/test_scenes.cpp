// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include <fstream>

#include "layerdiff/error.hpp"
#include "layerdiff/image_io.hpp"
#include "layerdiff/scenes.hpp"
#include "test_util.hpp"

namespace layerdiff {
namespace {

SceneSample scene(std::uint64_t seed, double occlusion = 0.3) {
    DRng rng(seed);
    SceneConfig cfg;
    cfg.size = 16;
    cfg.occlusion_prob = occlusion;
    return generate_scene(rng, cfg);
}

TEST(Scenes, StructureInvariants) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SceneSample s = scene(seed);
        ASSERT_GE(s.instance_count(), 1u);
        ASSERT_LE(s.instance_count(), 4u);
        EXPECT_NO_THROW(s.masks.validate());
        EXPECT_EQ(s.layers.size(), s.instance_count());
        EXPECT_EQ(s.keypoints.size(), s.instance_count());
        EXPECT_EQ(s.composite, quantize_image(s.composite));
        const Tensor u = union_mask(s.masks);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    if (u.at(y, x) == 0.0) EXPECT_EQ(s.composite.at(c, y, x), s.background.at(c, y, x));
                    for (std::size_t k = 0; k < s.instance_count(); ++k)
                        if (s.masks.masks[k].at(y, x) == 0.0)
                            EXPECT_EQ(s.layers[k].at(c, y, x), s.background.at(c, y, x));
                }
                EXPECT_EQ(s.parsing.at(y, x) != 0, u.at(y, x) != 0.0);
            }
    }
}

TEST(Scenes, SameSeedSameScene) {
    const SceneSample a = scene(3), b = scene(3), c = scene(4);
    EXPECT_EQ(a.composite, b.composite);
    EXPECT_EQ(a.prompt, b.prompt);
    EXPECT_FALSE(a.composite == c.composite);
}

TEST(Scenes, DisjointWithoutOcclusion) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SceneSample s = scene(seed, 0.0);
        double area = 0.0;
        for (const auto& m : s.masks.masks) area += mask_area(m);
        EXPECT_EQ(area, mask_area(union_mask(s.masks)));
    }
}

TEST(Scenes, ConfigValidation) {
    SceneConfig cfg;
    cfg.min_instances = 3;
    cfg.max_instances = 2;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SceneConfig{};
    cfg.size = 4;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PoseMap, GaussianPeaks) {
    Skeleton sk{};
    sk[0] = Keypoint{5, 5, 1};
    sk[1] = Keypoint{2, 2, 0};
    const std::vector<Skeleton> one{sk};
    const PoseMap p = render_pose_map(one, 12, 12, 2.0);
    EXPECT_EQ(p.heatmaps.shape(), (Shape{kKeypointCount, 12, 12}));
    EXPECT_DOUBLE_EQ(p.heatmaps.at(0, 5, 5), 1.0);
    EXPECT_NEAR(p.heatmaps.at(0, 5, 7), std::exp(-0.5), 1e-15);
    EXPECT_EQ(p.heatmaps.at(1, 2, 2), 0.0);
    for (double v : p.heatmaps.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Augment, FlipIsAnInvolution) {
    const SceneSample s = scene(5);
    const SceneSample f = flip_horizontal(s);
    EXPECT_EQ(f.composite.at(0, 3, 0), s.composite.at(0, 3, 15));
    const SceneSample ff = flip_horizontal(f);
    EXPECT_EQ(ff.composite, s.composite);
    EXPECT_EQ(ff.background, s.background);
    EXPECT_EQ(ff.parsing, s.parsing);
    for (std::size_t k = 0; k < s.instance_count(); ++k) {
        EXPECT_EQ(ff.masks.masks[k], s.masks.masks[k]);
        EXPECT_EQ(ff.keypoints[k], s.keypoints[k]);
    }
    // Left and right hands swap names under the mirror.
    const auto lh = static_cast<std::size_t>(Joint::left_hand), rh = static_cast<std::size_t>(Joint::right_hand);
    if (s.keypoints[0][rh].visibility) EXPECT_EQ(f.keypoints[0][lh].x, 15 - s.keypoints[0][rh].x);
}

TEST(Augment, CropAndDilation) {
    const SceneSample s = scene(6);
    DRng rng(1);
    const SceneSample c = augment(s, rng, AugmentConfig{8, 0.0, 0});
    EXPECT_EQ(c.composite.shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(c.masks.height(), 8u);
    EXPECT_EQ(c.parsing.height, 8u);

    DRng r2(2);
    const SceneSample d = augment(s, r2, AugmentConfig{0, 0.0, 2});
    for (std::size_t k = 0; k < s.instance_count(); ++k)
        EXPECT_GE(mask_area(d.masks.masks[k]), mask_area(s.masks.masks[k]));
    EXPECT_EQ(d.composite, s.composite);
}

TEST(Dataset, RoundTripAndMissingFiles) {
    testing::TempDir dir("dataset");
    std::vector<SceneSample> samples{scene(7), scene(8)};
    SceneConfig cfg;
    cfg.size = 16;
    write_dataset(samples, dir.path(), cfg, 7);
    EXPECT_TRUE(std::filesystem::exists(dir / "mask_00000_1.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "layer_00001_1.png"));
    const auto back = read_dataset(dir.path());
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].composite, samples[i].composite);
        EXPECT_EQ(back[i].background, samples[i].background);
        EXPECT_EQ(back[i].prompt, samples[i].prompt);
        EXPECT_EQ(back[i].parsing, samples[i].parsing);
        ASSERT_EQ(back[i].instance_count(), samples[i].instance_count());
        for (std::size_t k = 0; k < back[i].instance_count(); ++k) {
            EXPECT_EQ(back[i].masks.masks[k], samples[i].masks.masks[k]);
            EXPECT_EQ(back[i].layers[k], samples[i].layers[k]);
            EXPECT_EQ(back[i].keypoints[k], samples[i].keypoints[k]);
        }
    }
    std::filesystem::remove(dir / "prompt_00001.txt");
    EXPECT_THROW(read_sample(dir.path(), 1), DataError);
    EXPECT_NO_THROW(read_sample(dir.path(), 0));
    EXPECT_THROW(read_dataset(dir / "nowhere"), DataError);
}

TEST(ImageIo, RoundTrips) {
    testing::TempDir dir("png");
    DRng rng(3);
    const Tensor img = quantize_image(testing::uniform({3, 5, 7}, rng));
    write_png_rgb(dir / "a.png", img);
    EXPECT_EQ(read_png_rgb(dir / "a.png"), img);

    Tensor mask({5, 7});
    mask.at(2, 3) = 1.0;
    write_png_mask(dir / "m.png", mask);
    EXPECT_EQ(read_png_mask(dir / "m.png"), mask);

    IndexedImage idx{2, 3, {0, 1, 2, 3, 2, 1}};
    write_png_indexed(dir / "i.png", idx, 4);
    const IndexedImage back = read_png_indexed(dir / "i.png");
    EXPECT_EQ(back.indices, idx.indices);
    EXPECT_EQ(back.width, 3u);

    EXPECT_THROW(read_png_rgb(dir / "missing.png"), DataError);
    {
        std::ofstream junk(dir / "junk.png");
        junk << "not a png";
    }
    EXPECT_THROW(read_png_rgb(dir / "junk.png"), DataError);
}

TEST(ImageIo, Quantize) {
    const Tensor q = quantize_image(Tensor::vector({-0.5, 0.5, 1.7, 0.1}));
    EXPECT_EQ(q[0], 0.0);
    EXPECT_EQ(q[1], 128.0 / 255.0);
    EXPECT_EQ(q[2], 1.0);
    EXPECT_EQ(q[3], 26.0 / 255.0);
}

}  // namespace
}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "layerdiff/autodiff.hpp"
#include "layerdiff/masks.hpp"
#include "layerdiff/nn.hpp"

namespace layerdiff {

inline constexpr std::size_t kKeypointCount = 8;
inline constexpr std::size_t kPartLabelCount = 4;

/// Toy skeleton joints, in heatmap channel order.
enum class Joint : std::uint8_t { head, neck, chest, pelvis, left_hand, right_hand, left_foot, right_foot };
enum class PartLabel : std::uint8_t { background = 0, head = 1, torso = 2, limbs = 3 };

struct Keypoint {
    int x = 0;
    int y = 0;
    int visibility = 0;  // 0 = not visible, 1 = visible

    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};
using Skeleton = std::array<Keypoint, kKeypointCount>;

/// One Gaussian heatmap per joint, [K x H x W], values in [0, 1].
struct PoseMap {
    Tensor heatmaps;
};

/// Per-pixel part labels in [0, kPartLabelCount).
struct ParsingMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels;

    ParsingMap() = default;
    ParsingMap(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}
    std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
    /// [L x H x W] indicator channels.
    Tensor one_hot() const;

    friend bool operator==(const ParsingMap&, const ParsingMap&) = default;
};

enum class Segment : std::uint8_t { text, pose, parse, mask, context };
std::string to_string(Segment segment);

/// Cross-attention context: token rows plus the segment each row came from.
struct ConditionSequence {
    Var tokens;  // [n_tok x d_cond]
    std::vector<Segment> tags;

    std::size_t size() const noexcept { return tags.size(); }
    std::size_t count(Segment segment) const;
};

/// clamp(sum_{j != k} M_j, 0, 1). k is 0-based; throws when out of range.
Tensor context_mask(const MaskSet& masks, std::size_t k);

/// Fixed toy vocabulary (< 64 words). Id 0 is "<pad>".
class Vocabulary {
public:
    static const std::vector<std::string>& words();
    static std::size_t size() { return words().size(); }
    /// Throws DataError on unknown words.
    static int id(const std::string& word);
    static const std::string& word(int id);
    static std::vector<int> encode(const std::string& text);
    static std::string decode(const std::vector<int>& ids);
};

struct HmgConfig {
    std::size_t image_size = 32;   // pose/parsing resolution
    std::size_t latent_size = 16;  // mask resolution fed to the mask encoders
    std::size_t d_cond = 64;
    std::vector<std::size_t> channels{16, 32};
    bool use_pose_parse = true;
};

/// Bias-free stride-2 3x3 convolutions with SiLU, flattened to one token
/// per output cell and projected to d_cond with a biased linear map.
class SpatialEncoder {
public:
    SpatialEncoder() = default;
    SpatialEncoder(std::size_t in_channels, const std::vector<std::size_t>& channels, std::size_t d_cond, DRng& rng);

    Var operator()(const Var& input) const;
    /// Tokens produced for an input of the given square extent.
    std::size_t token_count(std::size_t extent) const;
    void collect(ParameterSet& params, const std::string& prefix) const;

private:
    std::vector<Conv2d> convs_;
    Linear proj_;
};

/// Text, pose, parsing and mask encoders feeding the condition sequences.
class ConditionEncoder {
public:
    ConditionEncoder() = default;
    ConditionEncoder(const HmgConfig& cfg, DRng& rng);

    const HmgConfig& config() const noexcept { return cfg_; }

    /// Embedding lookup; throws DataError on ids outside the vocabulary.
    Var embed_text(const std::vector<int>& ids) const;
    Var encode_pose(const PoseMap& pose) const;
    Var encode_parsing(const ParsingMap& parsing) const;
    /// Binary mask at latent resolution.
    Var encode_mask(const Tensor& mask) const;
    Var encode_context(const Tensor& context) const;

    /// Parameters shared by every branch.
    ParameterSet shared_parameters() const;
    /// Parameters only reachable from foreground conditions (mask encoders).
    ParameterSet foreground_parameters() const;
    void collect(ParameterSet& params) const;

private:
    HmgConfig cfg_;
    Var text_table_;  // [vocab x d_cond]
    SpatialEncoder pose_;
    SpatialEncoder parse_;
    SpatialEncoder target_mask_;
    SpatialEncoder context_mask_;
};

/// text, pose, parse, target mask, context mask. Undefined pose/parse vars
/// (guidance disabled) drop their segments.
ConditionSequence assemble_condition_fg(const Var& text, const Var& pose, const Var& parse, const Var& target_mask,
                                        const Var& context);
/// text, pose, parse.
ConditionSequence assemble_condition_bg(const Var& text, const Var& pose, const Var& parse);

/// Per-branch condition sequences for one scene.
struct BranchConditions {
    std::vector<ConditionSequence> fg;  // one per instance, index order
    ConditionSequence bg;
};

/// Encodes the shared text/pose/parsing segments once and adds each
/// instance's target and context masks (downsampled to latent extent).
/// Pose and parsing are ignored when the encoder's config disables them.
BranchConditions build_conditions(const ConditionEncoder& encoder, const std::vector<int>& prompt,
                                  const PoseMap& pose, const ParsingMap& parsing, const MaskSet& masks);

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/conditioning.hpp"

#include <algorithm>
#include <sstream>

#include "layerdiff/attention.hpp"
#include "layerdiff/error.hpp"
#include "layerdiff/faults.hpp"

namespace layerdiff {

Tensor ParsingMap::one_hot() const {
    Tensor out({kPartLabelCount, height, width});
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::uint8_t l = at(y, x);
            if (l >= kPartLabelCount) throw DataError("parsing label out of range");
            out.at(l, y, x) = 1.0;
        }
    return out;
}

std::string to_string(Segment segment) {
    switch (segment) {
        case Segment::text: return "text";
        case Segment::pose: return "pose";
        case Segment::parse: return "parse";
        case Segment::mask: return "mask";
        case Segment::context: return "context";
    }
    return "?";
}

std::size_t ConditionSequence::count(Segment segment) const {
    return static_cast<std::size_t>(std::count(tags.begin(), tags.end(), segment));
}

Tensor context_mask(const MaskSet& masks, std::size_t k) {
    if (k >= masks.count()) {
        throw Error("context_mask: instance " + std::to_string(k) + " out of range for " +
                    std::to_string(masks.count()) + " masks");
    }
    Tensor out(masks.masks[k].shape());
    for (std::size_t j = 0; j < masks.count(); ++j) {
        if (j == k) continue;
        require_same_shape(out, masks.masks[j], "context_mask");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += masks.masks[j][i];
    }
    if (active_fault() != Fault::broken_clamp) {
        for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

const std::vector<std::string>& Vocabulary::words() {
    static const std::vector<std::string> kWords = {
        "<pad>",  "remove", "erase",    "the",     "a",       "person",  "people",   "background", "one",
        "two",    "three",  "four",     "clean",   "occluded", "standing", "walking", "group",     "scene",
        "empty",  "street", "wall",     "floor",   "sky",     "all",     "of",      "and",        "with",
        "behind", "front",  "left",     "right",   "human",   "figure",  "fill",    "restore",    "layer"};
    return kWords;
}

int Vocabulary::id(const std::string& word) {
    const auto& w = words();
    auto it = std::find(w.begin(), w.end(), word);
    if (it == w.end()) throw DataError("unknown vocabulary word '" + word + "'");
    return static_cast<int>(it - w.begin());
}

const std::string& Vocabulary::word(int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) throw DataError("unknown token id " + std::to_string(id));
    return words()[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) {
    std::istringstream in(text);
    std::vector<int> ids;
    for (std::string w; in >> w;) ids.push_back(id(w));
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

SpatialEncoder::SpatialEncoder(std::size_t in_channels, const std::vector<std::size_t>& channels, std::size_t d_cond,
                               DRng& rng) {
    std::size_t in = in_channels;
    for (std::size_t c : channels) {
        convs_.emplace_back(in, c, 3, 2, rng, /*with_bias=*/false);
        in = c;
    }
    proj_ = Linear(in, d_cond, rng);
}

Var SpatialEncoder::operator()(const Var& input) const {
    Var h = input;
    for (const auto& conv : convs_) h = silu(conv(h));
    return proj_(to_tokens(h));
}

std::size_t SpatialEncoder::token_count(std::size_t extent) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) extent = (extent + 1) / 2;
    return extent * extent;
}

void SpatialEncoder::collect(ParameterSet& params, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(params, prefix + ".conv" + std::to_string(i));
    proj_.collect(params, prefix + ".proj");
}

ConditionEncoder::ConditionEncoder(const HmgConfig& cfg, DRng& rng) : cfg_(cfg) {
    if (cfg.channels.empty()) throw ConfigError("guidance encoders need at least one channel width");
    Tensor table = randn({Vocabulary::size(), cfg.d_cond}, rng);
    for (double& v : table.data()) v *= 0.5;
    text_table_ = parameter(std::move(table));
    pose_ = SpatialEncoder(kKeypointCount, cfg.channels, cfg.d_cond, rng);
    parse_ = SpatialEncoder(kPartLabelCount, cfg.channels, cfg.d_cond, rng);
    target_mask_ = SpatialEncoder(1, {cfg.channels.front()}, cfg.d_cond, rng);
    context_mask_ = SpatialEncoder(1, {cfg.channels.front()}, cfg.d_cond, rng);
}

Var ConditionEncoder::embed_text(const std::vector<int>& ids) const {
    const std::size_t d = cfg_.d_cond;
    std::vector<std::size_t> index;
    index.reserve(ids.size() * d);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= Vocabulary::size()) {
            throw DataError("unknown token id " + std::to_string(id));
        }
        for (std::size_t j = 0; j < d; ++j) index.push_back(static_cast<std::size_t>(id) * d + j);
    }
    return gather(text_table_, std::move(index), {ids.size(), d});
}

namespace {

void require_extent(const Tensor& t, std::size_t channels, std::size_t extent, const char* what) {
    if (t.rank() != 3 || t.dim(0) != channels || t.dim(1) != extent || t.dim(2) != extent) {
        throw ShapeError(std::string(what) + ": expected [" + std::to_string(channels) + "x" + std::to_string(extent) +
                         "x" + std::to_string(extent) + "], got " + shape_str(t.shape()));
    }
}

Tensor mask_input(const Tensor& mask, std::size_t extent, const char* what) {
    if (mask.rank() != 2 || mask.dim(0) != extent || mask.dim(1) != extent) {
        throw ShapeError(std::string(what) + ": mask must be " + std::to_string(extent) + "x" +
                         std::to_string(extent) + ", got " + shape_str(mask.shape()));
    }
    if (!is_binary(mask)) throw Error(std::string(what) + ": mask must be binary");
    return mask.reshaped({1, extent, extent});
}

}  // namespace

Var ConditionEncoder::encode_pose(const PoseMap& pose) const {
    require_extent(pose.heatmaps, kKeypointCount, cfg_.image_size, "encode_pose");
    return pose_(constant(pose.heatmaps));
}

Var ConditionEncoder::encode_parsing(const ParsingMap& parsing) const {
    if (parsing.height != cfg_.image_size || parsing.width != cfg_.image_size) {
        throw ShapeError("encode_parsing: parsing map resolution does not match the configured image size");
    }
    return parse_(constant(parsing.one_hot()));
}

Var ConditionEncoder::encode_mask(const Tensor& mask) const {
    return target_mask_(constant(mask_input(mask, cfg_.latent_size, "encode_mask")));
}

Var ConditionEncoder::encode_context(const Tensor& context) const {
    return context_mask_(constant(mask_input(context, cfg_.latent_size, "encode_context")));
}

ParameterSet ConditionEncoder::shared_parameters() const {
    ParameterSet params;
    params.add("hmg.text", text_table_);
    pose_.collect(params, "hmg.pose");
    parse_.collect(params, "hmg.parse");
    return params;
}

ParameterSet ConditionEncoder::foreground_parameters() const {
    ParameterSet params;
    target_mask_.collect(params, "hmg.target_mask");
    context_mask_.collect(params, "hmg.context_mask");
    return params;
}

void ConditionEncoder::collect(ParameterSet& params) const {
    params.append(shared_parameters());
    params.append(foreground_parameters());
}

namespace {

ConditionSequence assemble(const std::vector<std::pair<Var, Segment>>& parts) {
    std::vector<Var> pieces;
    ConditionSequence seq;
    std::size_t d = 0;
    for (const auto& [var, segment] : parts) {
        if (!var.defined()) continue;
        if (var.shape().size() != 2) throw ShapeError("condition segments must be [n x d_cond]");
        if (d == 0) d = var.shape()[1];
        if (var.shape()[1] != d) {
            throw ShapeError("condition segment '" + to_string(segment) + "' has width " +
                             std::to_string(var.shape()[1]) + ", expected " + std::to_string(d));
        }
        pieces.push_back(var);
        seq.tags.insert(seq.tags.end(), var.shape()[0], segment);
    }
    if (pieces.empty()) throw ShapeError("condition sequence has no segments");
    seq.tokens = concat_rows(pieces);
    return seq;
}

}  // namespace

ConditionSequence assemble_condition_fg(const Var& text, const Var& pose, const Var& parse, const Var& target_mask,
                                        const Var& context) {
    return assemble({{text, Segment::text},
                     {pose, Segment::pose},
                     {parse, Segment::parse},
                     {target_mask, Segment::mask},
                     {context, Segment::context}});
}

ConditionSequence assemble_condition_bg(const Var& text, const Var& pose, const Var& parse) {
    return assemble({{text, Segment::text}, {pose, Segment::pose}, {parse, Segment::parse}});
}

BranchConditions build_conditions(const ConditionEncoder& encoder, const std::vector<int>& prompt,
                                  const PoseMap& pose, const ParsingMap& parsing, const MaskSet& masks) {
    masks.validate();
    const HmgConfig& cfg = encoder.config();
    const Var text = encoder.embed_text(prompt);
    Var pose_tokens, parse_tokens;
    if (cfg.use_pose_parse) {
        pose_tokens = encoder.encode_pose(pose);
        parse_tokens = encoder.encode_parsing(parsing);
    }
    const std::size_t ls = cfg.latent_size;
    BranchConditions out;
    out.fg.reserve(masks.count());
    for (std::size_t k = 0; k < masks.count(); ++k) {
        const Var target = encoder.encode_mask(downsample_mask(masks.masks[k], ls, ls));
        const Var context = encoder.encode_context(downsample_mask(context_mask(masks, k), ls, ls));
        out.fg.push_back(assemble_condition_fg(text, pose_tokens, parse_tokens, target, context));
    }
    out.bg = assemble_condition_bg(text, pose_tokens, parse_tokens);
    return out;
}

}  // namespace layerdiff

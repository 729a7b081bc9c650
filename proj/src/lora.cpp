// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/lora.hpp"

#include <algorithm>

#include "layerdiff/error.hpp"

namespace layerdiff {

std::string_view to_string(Branch branch) { return branch == Branch::fg ? "fg" : "bg"; }

std::string_view to_string(Projection projection) {
    switch (projection) {
        case Projection::q: return "q";
        case Projection::k: return "k";
        case Projection::v: return "v";
    }
    return "?";
}

Branch parse_branch(std::string_view text) {
    if (text == "fg" || text == "foreground") return Branch::fg;
    if (text == "bg" || text == "background") return Branch::bg;
    throw ConfigError("unknown branch '" + std::string(text) + "'");
}

void LoraAdapter::set_frozen(bool frozen) {
    a.set_frozen(frozen);
    b.set_frozen(frozen);
    alpha.set_frozen(frozen);
}

LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out, DRng& rng, const LoraConfig& cfg, Branch branch,
                         Projection projection) {
    if (cfg.rank < 1 || cfg.rank > std::min(d_in, d_out)) {
        throw ConfigError("LoRA rank " + std::to_string(cfg.rank) + " must lie in [1, " +
                          std::to_string(std::min(d_in, d_out)) + "]");
    }
    Tensor a = randn({cfg.rank, d_in}, rng);
    for (double& v : a.data()) v *= cfg.init_std;
    LoraAdapter adapter;
    adapter.a = parameter(std::move(a));
    adapter.b = parameter(Tensor({d_out, cfg.rank}));
    adapter.alpha = parameter(Tensor::scalar(cfg.alpha));
    adapter.branch = branch;
    adapter.projection = projection;
    return adapter;
}

Var lora_delta(const LoraAdapter& adapter) {
    if (adapter.b.shape().at(1) != adapter.a.shape().at(0)) {
        throw ShapeError("lora_delta: B " + shape_str(adapter.b.shape()) + " does not match A " +
                         shape_str(adapter.a.shape()));
    }
    return mul_scalar(matmul(adapter.b, adapter.a), adapter.alpha);
}

Var apply_projection(const Var& x, const Var& w_base, const LoraAdapter* adapter) {
    if (!adapter) return matmul_nt(x, w_base);
    if (adapter->d_out() != w_base.shape().at(0) || adapter->d_in() != w_base.shape().at(1)) {
        throw ShapeError("apply_projection: adapter delta [" + std::to_string(adapter->d_out()) + "x" +
                         std::to_string(adapter->d_in()) + "] does not match base weight " +
                         shape_str(w_base.shape()));
    }
    return matmul_nt(x, add(w_base, lora_delta(*adapter)));
}

void BranchRouter::add_slot(const std::string& slot, std::size_t d_in, std::size_t d_out, Projection projection,
                            DRng& rng, const LoraConfig& cfg) {
    if (fg_.count(slot)) throw ConfigError("duplicate LoRA slot '" + slot + "'");
    fg_.emplace(slot, init_adapter(d_in, d_out, rng, cfg, Branch::fg, projection));
    bg_.emplace(slot, init_adapter(d_in, d_out, rng, cfg, Branch::bg, projection));
}

const LoraAdapter& BranchRouter::adapter(Branch branch, const std::string& slot) const {
    const auto& s = set(branch);
    auto it = s.find(slot);
    if (it == s.end()) throw Error("no LoRA slot '" + slot + "'");
    return it->second;
}

LoraAdapter& BranchRouter::adapter(Branch branch, const std::string& slot) {
    auto& s = set(branch);
    auto it = s.find(slot);
    if (it == s.end()) throw Error("no LoRA slot '" + slot + "'");
    return it->second;
}

const std::map<std::string, LoraAdapter>& BranchRouter::adapters(Branch branch) const { return set(branch); }

void BranchRouter::set_frozen(Branch branch, bool frozen) {
    for (auto& [slot, adapter] : set(branch)) adapter.set_frozen(frozen);
}

bool BranchRouter::frozen(Branch branch) const {
    const auto& s = set(branch);
    return !s.empty() && std::all_of(s.begin(), s.end(), [](const auto& kv) { return kv.second.frozen(); });
}

void BranchRouter::clamp_alpha() {
    for (auto* s : {&fg_, &bg_})
        for (auto& [slot, adapter] : *s) {
            double& a = adapter.alpha.mutable_value()[0];
            a = std::clamp(a, LoraConfig::kAlphaMin, LoraConfig::kAlphaMax);
        }
}

ParameterSet BranchRouter::parameters(Branch branch) const {
    ParameterSet params;
    const std::string prefix = "lora." + std::string(to_string(branch)) + ".";
    for (const auto& [slot, adapter] : set(branch)) {
        params.add(prefix + slot + ".A", adapter.a);
        params.add(prefix + slot + ".B", adapter.b);
        params.add(prefix + slot + ".alpha", adapter.alpha);
    }
    return params;
}

void BranchRouter::collect(ParameterSet& params) const {
    params.append(parameters(Branch::fg));
    params.append(parameters(Branch::bg));
}

void set_frozen(BranchRouter& router, Branch branch, bool frozen) { router.set_frozen(branch, frozen); }

}  // namespace layerdiff

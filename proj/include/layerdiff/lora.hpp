// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <string_view>

#include "layerdiff/autodiff.hpp"
#include "layerdiff/nn.hpp"
#include "layerdiff/rng.hpp"

namespace layerdiff {

enum class Branch { fg, bg };
enum class Projection { q, k, v };

std::string_view to_string(Branch branch);
std::string_view to_string(Projection projection);
/// Accepts "fg"/"foreground" and "bg"/"background".
Branch parse_branch(std::string_view text);

struct LoraConfig {
    std::size_t rank = 16;
    double alpha = 16.0;
    double init_std = 0.02;
    static constexpr double kAlphaMin = 0.0;
    static constexpr double kAlphaMax = 64.0;
};

/// Low-rank weight delta alpha * B * A for one projection of one branch.
struct LoraAdapter {
    Var a;      // [r x d_in]
    Var b;      // [d_out x r]
    Var alpha;  // rank-0, learnable
    Branch branch = Branch::fg;
    Projection projection = Projection::q;

    std::size_t rank() const { return a.shape().at(0); }
    std::size_t d_in() const { return a.shape().at(1); }
    std::size_t d_out() const { return b.shape().at(0); }
    bool frozen() const { return a.frozen(); }
    void set_frozen(bool frozen);
};

/// A ~ N(0, init_std^2), B = 0, alpha = cfg.alpha. Throws ConfigError
/// unless 1 <= rank <= min(d_in, d_out).
LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out, DRng& rng, const LoraConfig& cfg = {},
                         Branch branch = Branch::fg, Projection projection = Projection::q);

/// alpha * B * A, shaped like the base weight [d_out x d_in].
Var lora_delta(const LoraAdapter& adapter);

/// x (W_base + delta)^T; a null adapter gives the plain projection x W_base^T.
Var apply_projection(const Var& x, const Var& w_base, const LoraAdapter* adapter);

/// Two adapter sets, one shared by every foreground branch and one for the
/// background branch, keyed by projection slot (e.g. "mid.self.q").
class BranchRouter {
public:
    void add_slot(const std::string& slot, std::size_t d_in, std::size_t d_out, Projection projection, DRng& rng,
                  const LoraConfig& cfg);

    const LoraAdapter& adapter(Branch branch, const std::string& slot) const;
    LoraAdapter& adapter(Branch branch, const std::string& slot);
    const std::map<std::string, LoraAdapter>& adapters(Branch branch) const;
    std::size_t slot_count() const { return fg_.size(); }

    void set_frozen(Branch branch, bool frozen);
    bool frozen(Branch branch) const;
    /// Projects every alpha back into [kAlphaMin, kAlphaMax].
    void clamp_alpha();

    void collect(ParameterSet& params) const;
    ParameterSet parameters(Branch branch) const;

private:
    std::map<std::string, LoraAdapter>& set(Branch branch) { return branch == Branch::fg ? fg_ : bg_; }
    const std::map<std::string, LoraAdapter>& set(Branch branch) const { return branch == Branch::fg ? fg_ : bg_; }

    std::map<std::string, LoraAdapter> fg_;
    std::map<std::string, LoraAdapter> bg_;
};

void set_frozen(BranchRouter& router, Branch branch, bool frozen);

}  // namespace layerdiff

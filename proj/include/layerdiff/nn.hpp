// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "layerdiff/autodiff.hpp"
#include "layerdiff/rng.hpp"

namespace layerdiff {

struct NamedParam {
    std::string name;
    Var var;
};

/// Ordered list of trainable leaves; the order is the checkpoint and
/// optimizer-state order.
class ParameterSet {
public:
    void add(std::string name, Var var);
    void append(const ParameterSet& other);

    const std::vector<NamedParam>& items() const noexcept { return items_; }
    std::vector<Var> vars() const;
    std::size_t size() const noexcept { return items_.size(); }
    std::size_t scalar_count() const;
    /// Throws Error when absent.
    const NamedParam& find(const std::string& name) const;

private:
    std::vector<NamedParam> items_;
};

/// y = x W^T + b over rows of x.
struct Linear {
    Var weight;  // [out x in]
    Var bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, DRng& rng, double gain = 1.0);
    Var operator()(const Var& x) const;
    void collect(ParameterSet& params, const std::string& prefix) const;
};

struct Conv2d {
    Var weight;  // [out x in x k x k]
    Var bias;    // [out]; undefined for bias-free layers
    std::size_t stride = 1;
    std::size_t pad = 1;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, DRng& rng, bool with_bias = true,
           double gain = 1.0);
    Var operator()(const Var& x) const;
    void collect(ParameterSet& params, const std::string& prefix) const;
};

struct GroupNorm {
    Var gamma;
    Var beta;
    std::size_t groups = 1;

    GroupNorm() = default;
    GroupNorm(std::size_t channels, std::size_t groups);
    Var operator()(const Var& x) const;
    void collect(ParameterSet& params, const std::string& prefix) const;
};

}  // namespace layerdiff

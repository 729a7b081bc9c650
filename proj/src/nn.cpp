// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/nn.hpp"

#include <cmath>

#include "layerdiff/error.hpp"

namespace layerdiff {

void ParameterSet::add(std::string name, Var var) {
    if (!var.defined()) return;
    items_.push_back({std::move(name), std::move(var)});
}

void ParameterSet::append(const ParameterSet& other) {
    items_.insert(items_.end(), other.items_.begin(), other.items_.end());
}

std::vector<Var> ParameterSet::vars() const {
    std::vector<Var> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.var);
    return out;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.var.value().size();
    return n;
}

const NamedParam& ParameterSet::find(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return p;
    throw Error("no parameter named '" + name + "'");
}

namespace {

// LeCun-normal, std = gain / sqrt(fan_in)
Tensor init_normal(Shape shape, std::size_t fan_in, double gain, DRng& rng) {
    Tensor t = randn(shape, rng);
    const double std = gain / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data()) v *= std;
    return t;
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, DRng& rng, double gain)
    : weight(parameter(init_normal({out, in}, in, gain, rng))), bias(parameter(Tensor({out}))) {}

Var Linear::operator()(const Var& x) const { return add_row_bias(matmul_nt(x, weight), bias); }

void Linear::collect(ParameterSet& params, const std::string& prefix) const {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, DRng& rng, bool with_bias,
               double gain)
    : weight(parameter(init_normal({out, in, kernel, kernel}, in * kernel * kernel, gain, rng))),
      stride(stride_),
      pad(kernel / 2) {
    if (with_bias) bias = parameter(Tensor({out}));
}

Var Conv2d::operator()(const Var& x) const {
    Var y = conv2d(x, weight, stride, pad);
    return bias.defined() ? add_channel_bias(y, bias) : y;
}

void Conv2d::collect(ParameterSet& params, const std::string& prefix) const {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
}

GroupNorm::GroupNorm(std::size_t channels, std::size_t groups_)
    : gamma(parameter(Tensor({channels}, 1.0))), beta(parameter(Tensor({channels}))), groups(groups_) {
    if (groups == 0 || channels % groups != 0) {
        throw ConfigError("group count " + std::to_string(groups) + " does not divide " + std::to_string(channels) +
                          " channels");
    }
}

Var GroupNorm::operator()(const Var& x) const { return group_norm(x, gamma, beta, groups); }

void GroupNorm::collect(ParameterSet& params, const std::string& prefix) const {
    params.add(prefix + ".gamma", gamma);
    params.add(prefix + ".beta", beta);
}

}  // namespace layerdiff

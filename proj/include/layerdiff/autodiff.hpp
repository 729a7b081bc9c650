// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "layerdiff/tensor.hpp"

namespace layerdiff {

namespace detail {
struct Node;
}

/// Handle to a value in the recorded computation graph.
///
/// Every op below records its inputs and a backward rule while gradient
/// recording is enabled and at least one input requires a gradient; grad()
/// replays the records in reverse topological order. Graphs are owned by
/// the handles, so dropping the loss releases the whole step's tape.
class Var {
public:
    Var() = default;

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    double item() const { return value().item(); }
    bool requires_grad() const;

    /// Leaf parameters only: in-place access for optimizers and checkpoints.
    Tensor& mutable_value();
    bool frozen() const;
    void set_frozen(bool frozen);

    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

private:
    friend Var make_var(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);
    friend Var parameter(Tensor value);
    friend Var constant(Tensor value);
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    bool requires_grad = false;
    bool leaf = false;
    bool frozen = false;

    /// Gradient buffer of input i, zero-filled on first use.
    Tensor& input_grad(std::size_t i);
};

}  // namespace detail

/// Trainable leaf.
Var parameter(Tensor value);
/// Leaf that never receives a gradient.
Var constant(Tensor value);

/// Builds a recorded result; used by the op implementations and by modules
/// that define their own fused ops. Throws NumericError on NaN/Inf.
Var make_var(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);

/// Disables recording for its lifetime (inference, finite differences).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_recording_enabled() noexcept;

// Elementwise (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// a * s for a single-element s.
Var mul_scalar(const Var& a, const Var& s);
Var silu(const Var& a);

// Linear algebra on 2-D values.
Var matmul(const Var& a, const Var& b);
/// a * b^T without materializing the transpose.
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
/// x[n x d] + b[d] on every row.
Var add_row_bias(const Var& x, const Var& b);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);

/// Concatenation along the leading axis; trailing extents must agree.
Var concat_rows(const std::vector<Var>& parts);
Var reshape(const Var& a, Shape shape);
/// out.flat[i] = src.flat[index[i]].
Var gather(const Var& src, std::vector<std::size_t> index, Shape out_shape);

// Image-shaped values [C x H x W].
/// Cross-correlation with kernel [F x C x kh x kw], zero padding.
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad);
Var add_channel_bias(const Var& x, const Var& b);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups, double eps = 1e-5);
Var upsample_nearest2x(const Var& x);
/// 3x3 mean over in-bounds neighbours (border cells average fewer values).
Var box_blur3(const Var& x);
/// Forward difference along axis 1 (rows) or 2 (columns); zero in the last slot.
Var forward_diff(const Var& x, std::size_t axis);
/// [C x H x W] -> [H*W x C].
Var to_tokens(const Var& x);
/// [H*W x C] -> [C x H x W].
Var from_tokens(const Var& tokens, std::size_t height, std::size_t width);

Var softmax_rows(const Var& x);

// Reductions to a rank-0 value.
Var sum(const Var& a);
Var sum_squares(const Var& a);

/// Reverse-mode derivatives of a single-element loss with respect to params.
/// Throws when the loss is not a scalar or a param does not feed the loss,
/// unless allow_unused is set, in which case such params get zeros.
std::vector<Tensor> grad(const Var& loss, const std::vector<Var>& params, bool allow_unused = false);

using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

/// Central differences (f(p+h) - f(p-h)) / 2h for every element of params.
std::vector<Tensor> finite_diff_grad(const ScalarFn& f, std::vector<Tensor> params, double h = 1e-5);

/// Central difference for a single element params[which][index].
double finite_diff_partial(const ScalarFn& f, std::vector<Tensor> params, std::size_t which, std::size_t index,
                           double h = 1e-5);

}  // namespace layerdiff

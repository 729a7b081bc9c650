// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "layerdiff/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "kernels.hpp"
#include "layerdiff/error.hpp"

namespace layerdiff {

namespace {

thread_local bool g_recording = true;

void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

const Tensor& val(const detail::Node& n, std::size_t i) { return n.inputs[i]->value; }
bool wants(const detail::Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

void require_rank(const Var& v, std::size_t rank, const char* op) {
    if (v.value().rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
    }
}

void require_same(const Var& a, const Var& b, const char* op) { require_same_shape(a.value(), b.value(), op); }

}  // namespace

Tensor& detail::Node::input_grad(std::size_t i) {
    Node& in = *inputs[i];
    if (in.grad.shape() != in.value.shape()) in.grad = Tensor(in.value.shape());
    return in.grad;
}

const Tensor& Var::value() const {
    if (!node_) throw Error("use of undefined Var");
    return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Var::mutable_value() {
    if (!node_ || !node_->leaf) throw Error("mutable_value() is only available on leaf variables");
    return node_->value;
}

bool Var::frozen() const { return node_ && node_->frozen; }

void Var::set_frozen(bool frozen) {
    if (!node_ || !node_->leaf) throw Error("only leaf variables can be frozen");
    node_->frozen = frozen;
}

Var parameter(Tensor value) {
    check_finite(value, "parameter");
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->leaf = true;
    return Var(std::move(node));
}

Var constant(Tensor value) {
    check_finite(value, "constant");
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->leaf = true;
    return Var(std::move(node));
}

Var make_var(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (g_recording && any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }
bool grad_recording_enabled() noexcept { return g_recording; }

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    check_finite(out, "add");
    return make_var(std::move(out), {a, b}, [](detail::Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(n, k)) continue;
            Tensor& g = n.input_grad(k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    check_finite(out, "sub");
    return make_var(std::move(out), {a, b}, [](detail::Node& n) {
        if (wants(n, 0)) {
            Tensor& g = n.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (wants(n, 1)) {
            Tensor& g = n.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    check_finite(out, "mul");
    return make_var(std::move(out), {a, b}, [](detail::Node& n) {
        if (wants(n, 0)) {
            Tensor& g = n.input_grad(0);
            const Tensor& other = val(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * other[i];
        }
        if (wants(n, 1)) {
            Tensor& g = n.input_grad(1);
            const Tensor& other = val(n, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * other[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= factor;
    check_finite(out, "scale");
    return make_var(std::move(out), {a}, [factor](detail::Node& n) {
        Tensor& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
    });
}

Var mul_scalar(const Var& a, const Var& s) {
    if (s.value().size() != 1) throw ShapeError("mul_scalar: scale must hold one element");
    const double sv = s.value()[0];
    Tensor out = a.value();
    for (double& v : out.data()) v *= sv;
    check_finite(out, "mul_scalar");
    return make_var(std::move(out), {a, s}, [](detail::Node& n) {
        const double sv = val(n, 1)[0];
        if (wants(n, 0)) {
            Tensor& g = n.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * sv;
        }
        if (wants(n, 1)) {
            const Tensor& av = val(n, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < av.size(); ++i) acc += n.grad[i] * av[i];
            n.input_grad(1)[0] += acc;
        }
    });
}

Var silu(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = v / (1.0 + std::exp(-v));
    check_finite(out, "silu");
    return make_var(std::move(out), {a}, [](detail::Node& n) {
        const Tensor& x = val(n, 0);
        Tensor& g = n.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            g[i] += n.grad[i] * s * (1.0 + x[i] * (1.0 - s));
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    }
    Tensor out({m, n});
    kernels::gemm_nn(m, n, k, a.value().raw(), b.value().raw(), out.raw());
    check_finite(out, "matmul");
    return make_var(std::move(out), {a, b}, [m, n, k](detail::Node& nd) {
        if (wants(nd, 0)) kernels::gemm_nt(m, k, n, nd.grad.raw(), val(nd, 1).raw(), nd.input_grad(0).raw());
        if (wants(nd, 1)) kernels::gemm_tn(k, n, m, val(nd, 0).raw(), nd.grad.raw(), nd.input_grad(1).raw());
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    if (b.shape()[1] != k) {
        throw ShapeError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()) + "^T");
    }
    Tensor out({m, n});
    kernels::gemm_nt(m, n, k, a.value().raw(), b.value().raw(), out.raw());
    check_finite(out, "matmul_nt");
    return make_var(std::move(out), {a, b}, [m, n, k](detail::Node& nd) {
        // dA = G * B, dB = G^T * A
        if (wants(nd, 0)) kernels::gemm_nn(m, k, n, nd.grad.raw(), val(nd, 1).raw(), nd.input_grad(0).raw());
        if (wants(nd, 1)) kernels::gemm_tn(n, k, m, nd.grad.raw(), val(nd, 0).raw(), nd.input_grad(1).raw());
    });
}

Var transpose(const Var& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    Tensor out({n, m});
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
    return make_var(std::move(out), {a}, [m, n](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g.at(i, j) += nd.grad.at(j, i);
    });
}

Var add_row_bias(const Var& x, const Var& b) {
    require_rank(x, 2, "add_row_bias");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    if (b.value().size() != d) throw ShapeError("add_row_bias: bias length does not match columns");
    Tensor out = x.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) += bv[j];
    check_finite(out, "add_row_bias");
    return make_var(std::move(out), {x, b}, [n, d](detail::Node& nd) {
        if (wants(nd, 0)) {
            Tensor& g = nd.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
        }
        if (wants(nd, 1)) {
            Tensor& g = nd.input_grad(1);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += nd.grad.at(i, j);
        }
    });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_cols");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    if (begin + count > d) throw ShapeError("slice_cols: range exceeds column count");
    Tensor out({n, count});
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = xv.at(i, begin + j);
    return make_var(std::move(out), {x}, [n, begin, count](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < count; ++j) g.at(i, begin + j) += nd.grad.at(i, j);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t n = parts.front().shape().at(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.shape()[0] != n) throw ShapeError("concat_cols: row counts differ");
        widths.push_back(p.shape()[1]);
        total += p.shape()[1];
    }
    Tensor out({n, total});
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, offset + j) = pv.at(i, j);
        offset += widths[k];
    }
    return make_var(std::move(out), parts, [n, widths](detail::Node& nd) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (wants(nd, k)) {
                Tensor& g = nd.input_grad(k);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) g.at(i, j) += nd.grad.at(i, offset + j);
            }
            offset += widths[k];
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const Shape& first = parts.front().shape();
    if (first.empty()) throw ShapeError("concat_rows: scalars cannot be concatenated");
    Shape trailing(first.begin() + 1, first.end());
    std::size_t rows = 0;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(trailing.begin(), trailing.end(), s.begin() + 1)) {
            throw ShapeError("concat_rows: trailing extents differ (" + shape_str(first) + " vs " + shape_str(s) +
                             ")");
        }
        rows += s[0];
        sizes.push_back(p.value().size());
    }
    Shape out_shape = first;
    out_shape[0] = rows;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += sizes[k];
    }
    return make_var(std::move(out), parts, [sizes](detail::Node& nd) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (wants(nd, k)) {
                Tensor& g = nd.input_grad(k);
                for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += nd.grad[offset + i];
            }
            offset += sizes[k];
        }
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_var(std::move(out), {a}, [](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
    });
}

Var gather(const Var& src, std::vector<std::size_t> index, Shape out_shape) {
    if (shape_size(out_shape) != index.size()) throw ShapeError("gather: index count does not match output shape");
    const Tensor& sv = src.value();
    Tensor out(std::move(out_shape));
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= sv.size()) throw ShapeError("gather: index out of range");
        out[i] = sv[index[i]];
    }
    return make_var(std::move(out), {src}, [index = std::move(index)](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += nd.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Image ops

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad) {
    require_rank(input, 3, "conv2d");
    require_rank(kernel, 4, "conv2d");
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    if (ks[1] != xs[0]) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " channels, input has " +
                         std::to_string(xs[0]));
    }
    if (ks[2] % 2 == 0 || ks[3] % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (xs[1] + 2 * pad < ks[2] || xs[2] + 2 * pad < ks[3]) throw ShapeError("conv2d: kernel larger than input");

    kernels::ConvGeometry g{xs[0], xs[1], xs[2], ks[2], ks[3], stride, pad, 0, 0};
    g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
    g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
    const std::size_t filters = ks[0];
    const std::size_t patch = g.channels * g.kh * g.kw;
    const std::size_t npix = g.out_h * g.out_w;

    auto col = std::make_shared<Tensor>(Shape{patch, npix});
    kernels::im2col(g, input.value().raw(), col->raw());
    Tensor out({filters, g.out_h, g.out_w});
    kernels::gemm_nn(filters, npix, patch, kernel.value().raw(), col->raw(), out.raw());
    check_finite(out, "conv2d");
    return make_var(std::move(out), {input, kernel}, [g, filters, patch, npix, col](detail::Node& nd) {
        if (wants(nd, 1)) kernels::gemm_nt(filters, patch, npix, nd.grad.raw(), col->raw(), nd.input_grad(1).raw());
        if (wants(nd, 0)) {
            Tensor dcol({patch, npix});
            kernels::gemm_tn(patch, npix, filters, val(nd, 1).raw(), nd.grad.raw(), dcol.raw());
            kernels::col2im(g, dcol.raw(), nd.input_grad(0).raw());
        }
    });
}

Var add_channel_bias(const Var& x, const Var& b) {
    require_rank(x, 3, "add_channel_bias");
    const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    if (b.value().size() != c) throw ShapeError("add_channel_bias: bias length does not match channels");
    Tensor out = x.value();
    const Tensor& bv = b.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += bv[ch];
    check_finite(out, "add_channel_bias");
    return make_var(std::move(out), {x, b}, [c, hw](detail::Node& nd) {
        if (wants(nd, 0)) {
            Tensor& g = nd.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
        }
        if (wants(nd, 1)) {
            Tensor& g = nd.input_grad(1);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t p = 0; p < hw; ++p) acc += nd.grad[ch * hw + p];
                g[ch] += acc;
            }
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups, double eps) {
    require_rank(x, 3, "group_norm");
    const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    if (groups == 0 || c % groups != 0) throw ShapeError("group_norm: groups must divide channel count");
    if (gamma.value().size() != c || beta.value().size() != c) throw ShapeError("group_norm: affine length mismatch");
    const std::size_t per = c / groups;
    const std::size_t count = per * hw;

    auto xhat = std::make_shared<Tensor>(x.shape());
    auto inv_std = std::make_shared<std::vector<double>>(groups);
    const Tensor& xv = x.value();
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t base = gi * count;
        double mean = 0.0;
        for (std::size_t i = 0; i < count; ++i) mean += xv[base + i];
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const double d = xv[base + i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(count);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[gi] = is;
        for (std::size_t i = 0; i < count; ++i) (*xhat)[base + i] = (xv[base + i] - mean) * is;
    }
    Tensor out(x.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = gv[ch] * (*xhat)[ch * hw + p] + bv[ch];
    check_finite(out, "group_norm");

    return make_var(std::move(out), {x, gamma, beta}, [c, hw, groups, per, count, xhat, inv_std](detail::Node& nd) {
        const Tensor& gv = val(nd, 1);
        if (wants(nd, 1)) {
            Tensor& g = nd.input_grad(1);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t p = 0; p < hw; ++p) acc += nd.grad[ch * hw + p] * (*xhat)[ch * hw + p];
                g[ch] += acc;
            }
        }
        if (wants(nd, 2)) {
            Tensor& g = nd.input_grad(2);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t p = 0; p < hw; ++p) acc += nd.grad[ch * hw + p];
                g[ch] += acc;
            }
        }
        if (wants(nd, 0)) {
            Tensor& g = nd.input_grad(0);
            const double n = static_cast<double>(count);
            for (std::size_t gi = 0; gi < groups; ++gi) {
                const std::size_t base = gi * count;
                double sum_d = 0.0, sum_dx = 0.0;
                for (std::size_t i = 0; i < count; ++i) {
                    const std::size_t ch = (base + i) / hw;
                    const double d = nd.grad[base + i] * gv[ch];
                    sum_d += d;
                    sum_dx += d * (*xhat)[base + i];
                }
                const double is = (*inv_std)[gi];
                for (std::size_t i = 0; i < count; ++i) {
                    const std::size_t ch = (base + i) / hw;
                    const double d = nd.grad[base + i] * gv[ch];
                    g[base + i] += is / n * (n * d - sum_d - (*xhat)[base + i] * sum_dx);
                }
            }
            (void)per;
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    require_rank(x, 3, "upsample_nearest2x");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    Tensor out({c, 2 * h, 2 * w});
    const Tensor& xv = x.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = xv.at(ch, y / 2, xx / 2);
    return make_var(std::move(out), {x}, [c, h, w](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx) g.at(ch, y / 2, xx / 2) += nd.grad.at(ch, y, xx);
    });
}

namespace {

template <typename Fn>
void for_each_box_neighbour(std::size_t h, std::size_t w, std::size_t y, std::size_t x, Fn&& fn) {
    const std::size_t y0 = y == 0 ? 0 : y - 1, y1 = std::min(h - 1, y + 1);
    const std::size_t x0 = x == 0 ? 0 : x - 1, x1 = std::min(w - 1, x + 1);
    const double inv = 1.0 / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
    for (std::size_t yy = y0; yy <= y1; ++yy)
        for (std::size_t xx = x0; xx <= x1; ++xx) fn(yy, xx, inv);
}

}  // namespace

Var box_blur3(const Var& x) {
    require_rank(x, 3, "box_blur3");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    Tensor out(x.shape());
    const Tensor& xv = x.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for_each_box_neighbour(h, w, y, xx, [&](std::size_t yy, std::size_t xq, double inv) {
                    acc += xv.at(ch, yy, xq) * inv;
                });
                out.at(ch, y, xx) = acc;
            }
    return make_var(std::move(out), {x}, [c, h, w](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) {
                    const double gy = nd.grad.at(ch, y, xx);
                    for_each_box_neighbour(h, w, y, xx, [&](std::size_t yy, std::size_t xq, double inv) {
                        g.at(ch, yy, xq) += gy * inv;
                    });
                }
    });
}

Var forward_diff(const Var& x, std::size_t axis) {
    require_rank(x, 3, "forward_diff");
    if (axis != 1 && axis != 2) throw ShapeError("forward_diff: axis must be 1 or 2");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const std::size_t dy = axis == 1 ? 1 : 0, dx = axis == 2 ? 1 : 0;
    Tensor out(x.shape());
    const Tensor& xv = x.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y + dy < h; ++y)
            for (std::size_t xx = 0; xx + dx < w; ++xx) out.at(ch, y, xx) = xv.at(ch, y + dy, xx + dx) - xv.at(ch, y, xx);
    return make_var(std::move(out), {x}, [c, h, w, dy, dx](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y + dy < h; ++y)
                for (std::size_t xx = 0; xx + dx < w; ++xx) {
                    const double gv = nd.grad.at(ch, y, xx);
                    g.at(ch, y + dy, xx + dx) += gv;
                    g.at(ch, y, xx) -= gv;
                }
    });
}

Var to_tokens(const Var& x) {
    require_rank(x, 3, "to_tokens");
    const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    return transpose(reshape(x, {c, hw}));
}

Var from_tokens(const Var& tokens, std::size_t height, std::size_t width) {
    require_rank(tokens, 2, "from_tokens");
    if (tokens.shape()[0] != height * width) throw ShapeError("from_tokens: token count does not match extent");
    const std::size_t c = tokens.shape()[1];
    return reshape(transpose(tokens), {c, height, width});
}

Var softmax_rows(const Var& x) {
    require_rank(x, 2, "softmax_rows");
    const std::size_t n = x.shape()[0], m = x.shape()[1];
    const Tensor& xv = x.value();
    check_finite(xv, "softmax_rows input");
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, xv.at(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double e = std::exp(xv.at(i, j) - mx);
            out.at(i, j) = e;
            total += e;
        }
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= total;
    }
    return make_var(std::move(out), {x}, [n, m](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        const Tensor& y = nd.value;
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += nd.grad.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < m; ++j) g.at(i, j) += y.at(i, j) * (nd.grad.at(i, j) - dot);
        }
    });
}

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    check_finite(out, "sum");
    return make_var(std::move(out), {a}, [](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        const double gv = nd.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

Var sum_squares(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().data()) acc += v * v;
    Tensor out = Tensor::scalar(acc);
    check_finite(out, "sum_squares");
    return make_var(std::move(out), {a}, [](detail::Node& nd) {
        Tensor& g = nd.input_grad(0);
        const Tensor& x = val(nd, 0);
        const double gv = 2.0 * nd.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv * x[i];
    });
}

// ---------------------------------------------------------------------------
// Differentiation

std::vector<Tensor> grad(const Var& loss, const std::vector<Var>& params, bool allow_unused) {
    if (!loss.defined() || loss.value().size() != 1) {
        throw ShapeError("grad: loss must be a single-element tensor");
    }
    using NodePtr = detail::Node*;
    std::vector<NodePtr> order;
    std::unordered_set<NodePtr> seen;
    if (loss.requires_grad()) {
        // Iterative post-order DFS: order ends up with inputs before consumers.
        std::vector<std::pair<NodePtr, std::size_t>> stack{{loss.node().get(), 0}};
        seen.insert(loss.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                NodePtr child = node->inputs[next++].get();
                if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (NodePtr n : order) n->grad = Tensor();
    if (!order.empty()) {
        NodePtr root = loss.node().get();
        root->grad = Tensor(root->value.shape(), 1.0);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            NodePtr n = *it;
            if (n->backward && n->grad.shape() == n->value.shape()) n->backward(*n);
        }
    }

    std::vector<Tensor> result;
    result.reserve(params.size());
    for (const auto& p : params) {
        NodePtr n = p.node().get();
        if (!seen.count(n)) {
            if (!allow_unused) throw Error("grad: parameter does not contribute to the loss");
            result.emplace_back(p.shape());
            continue;
        }
        if (n->grad.shape() == n->value.shape())
            result.push_back(n->grad);
        else
            result.emplace_back(p.shape());
    }
    for (NodePtr n : order) n->grad = Tensor();
    return result;
}

std::vector<Tensor> finite_diff_grad(const ScalarFn& f, std::vector<Tensor> params, double h) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor g(params[k].shape());
        for (std::size_t i = 0; i < params[k].size(); ++i) g[i] = finite_diff_partial(f, params, k, i, h);
        out.push_back(std::move(g));
    }
    return out;
}

double finite_diff_partial(const ScalarFn& f, std::vector<Tensor> params, std::size_t which, std::size_t index,
                           double h) {
    NoGradGuard guard;
    const double original = params.at(which)[index];
    params[which][index] = original + h;
    const double up = f(params);
    params[which][index] = original - h;
    const double down = f(params);
    params[which][index] = original;
    return (up - down) / (2.0 * h);
}

}  // namespace layerdiff

// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

// Dense loops shared by the forward and backward passes. All matrices are
// row-major and every routine accumulates into its output.

#pragma once

#include <cstddef>

namespace layerdiff::kernels {

/// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

/// C[m x n] += A[m x k] * B^T, B stored as [n x k]
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
}

/// C[m x n] += A^T * B, A stored as [k x m], B as [k x n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t kh, kw, stride, pad;
    std::size_t out_h, out_w;
};

/// Unfolds [C x H x W] into columns [C*kh*kw x out_h*out_w]; col must be zeroed.
inline void im2col(const ConvGeometry& g, const double* x, double* col) {
    const std::size_t npix = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((c * g.kh + ky) * g.kw + kx) * npix;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    const double* xrow = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        row[oy * g.out_w + ox] = xrow[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters columns back into dx.
inline void col2im(const ConvGeometry& g, const double* col, double* dx) {
    const std::size_t npix = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((c * g.kh + ky) * g.kw + kx) * npix;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    double* xrow = dx + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        xrow[ix] += row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace layerdiff::kernels

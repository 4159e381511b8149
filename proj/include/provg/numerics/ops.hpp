#pragma once

// Differentiable primitives. Every function validates shapes eagerly and
// throws ShapeError naming the graph scope on mismatch.

#include <cstddef>
#include <vector>

#include "provg/numerics/graph.hpp"
#include "provg/numerics/kernels.hpp"

namespace provg::nx {

using kernels::ConvGeom;

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);

// Elementwise binary ops. `b` may match `a`, or broadcast as a (1 x n) row,
// an (m x 1) column, or a (1 x 1) scalar.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> minimum(Var<T> a, Var<T> b);
template <typename T> Var<T> maximum(Var<T> a, Var<T> b);

/// scale * a + shift
template <typename T> Var<T> affine(Var<T> a, double scale, double shift = 0.0);

template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> smooth_l1(Var<T> a, double beta);

template <typename T> Var<T> softmax_rows(Var<T> a);
template <typename T> Var<T> log_softmax_rows(Var<T> a);

template <typename T> Var<T> sum_all(Var<T> a);
template <typename T> Var<T> mean_all(Var<T> a);
/// Averages over rows: (m x n) -> (1 x n).
template <typename T> Var<T> mean_over_rows(Var<T> a);
/// Averages over columns: (m x n) -> (m x 1).
template <typename T> Var<T> mean_over_cols(Var<T> a);

template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t count);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count);
template <typename T> Var<T> gather_rows(Var<T> table, const std::vector<int>& ids);
template <typename T> Var<T> layer_norm_rows(Var<T> a, double eps = 1e-5);

/// x is (H*W x in_ch); w is (kernel*kernel*in_ch x out_ch).
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, const ConvGeom& geom);
/// x is (H*W x C); w is (kernel*kernel x C).
template <typename T> Var<T> depthwise_conv2d(Var<T> x, Var<T> w, const ConvGeom& geom);

template <typename T> Var<T> upsample_nearest2x(Var<T> x, std::size_t height, std::size_t width);
/// Half-pixel bilinear interpolation, edges clamped.
template <typename T> Var<T> upsample_bilinear2x(Var<T> x, std::size_t height, std::size_t width);

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }

}  // namespace provg::nx

#pragma once

// Dense kernels behind the autodiff ops. Two implementations share each
// signature: the default namespace is OpenMP-parallel over output rows, and
// `reference` holds plain serial loops used as the test oracle.
//
// Row-partitioned parallelism never splits a single reduction across
// threads, so parallel results are bit-identical for any thread count.

#include <cstddef>

namespace provg::kernels {

/// Geometry of a 2-D convolution over an (H*W x C) row-major feature map.
struct ConvGeom {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return kernel * kernel * in_ch; }
};

// C (m x n) = A (m x k) * B (k x n); accumulate adds into C.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
// C (m x n) = A (m x k) * B^T, B stored (n x k).
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
// C (m x n) = A^T * B, A stored (k x m), B stored (k x n).
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

// Unfolds windows into rows: cols is (out_h*out_w x kernel*kernel*in_ch).
template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols);
// Adjoint of im2col; accumulates into dx.
template <typename T>
void col2im(const ConvGeom& g, const T* cols, T* dx);

template <typename T>
void depthwise_conv(const ConvGeom& g, const T* x, const T* w, T* y);
template <typename T>
void depthwise_conv_backward(const ConvGeom& g, const T* x, const T* w, const T* dy, T* dx,
                             T* dw);

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
/// Direct (non-unfolded) convolution: y = conv(x, w), w is (k*k*in_ch x out_ch).
template <typename T>
void conv2d_direct(const ConvGeom& g, const T* x, const T* w, T* y);
template <typename T>
void depthwise_conv(const ConvGeom& g, const T* x, const T* w, T* y);

}  // namespace reference

}  // namespace provg::kernels

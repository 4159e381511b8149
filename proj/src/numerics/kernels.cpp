#include "provg/numerics/kernels.hpp"

#include <algorithm>
#include <vector>

namespace provg::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

template <typename T>
inline void row_nn(std::size_t n, std::size_t k, const T* __restrict a_row, const T* __restrict b,
                   T* __restrict c_row) {
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a_row[p];
    const T* __restrict b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* c_row = c + i * n;
    if (!accumulate) std::fill(c_row, c_row + n, T(0));
    row_nn(n, k, a + i * k, b, c_row);
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* __restrict c_row = c + i * n;
    if (!accumulate) std::fill(c_row, c_row + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      const T* __restrict b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), patch = g.patch();
  const long outs = static_cast<long>(oh * ow);
#pragma omp parallel for schedule(static) if (oh * ow * patch > kParallelWork)
  for (long o = 0; o < outs; ++o) {
    const std::size_t oy = o / ow, ox = o % ow;
    T* dst = cols + o * patch;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        T* d = dst + (ky * g.kernel + kx) * g.in_ch;
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
            ix >= static_cast<long>(g.width)) {
          std::fill(d, d + g.in_ch, T(0));
        } else {
          const T* s = x + (iy * g.width + ix) * g.in_ch;
          std::copy(s, s + g.in_ch, d);
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeom& g, const T* cols, T* dx) {
  // Serial: overlapping windows scatter into shared input rows.
  const std::size_t oh = g.out_h(), ow = g.out_w(), patch = g.patch();
  for (std::size_t o = 0; o < oh * ow; ++o) {
    const std::size_t oy = o / ow, ox = o % ow;
    const T* src = cols + o * patch;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
      if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
        const T* s = src + (ky * g.kernel + kx) * g.in_ch;
        T* d = dx + (iy * g.width + ix) * g.in_ch;
        for (std::size_t c = 0; c < g.in_ch; ++c) d[c] += s[c];
      }
    }
  }
}

template <typename T>
void depthwise_conv(const ConvGeom& g, const T* x, const T* w, T* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), C = g.in_ch;
  const long outs = static_cast<long>(oh * ow);
#pragma omp parallel for schedule(static) if (oh * ow * C * g.kernel * g.kernel > kParallelWork)
  for (long o = 0; o < outs; ++o) {
    const std::size_t oy = o / ow, ox = o % ow;
    T* __restrict out = y + o * C;
    std::fill(out, out + C, T(0));
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
      if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
        const T* __restrict s = x + (iy * g.width + ix) * C;
        const T* __restrict wk = w + (ky * g.kernel + kx) * C;
        for (std::size_t c = 0; c < C; ++c) out[c] += s[c] * wk[c];
      }
    }
  }
}

template <typename T>
void depthwise_conv_backward(const ConvGeom& g, const T* x, const T* w, const T* dy, T* dx,
                             T* dw) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), C = g.in_ch;
  for (std::size_t o = 0; o < oh * ow; ++o) {
    const std::size_t oy = o / ow, ox = o % ow;
    const T* gout = dy + o * C;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
      if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
        const std::size_t src = (iy * g.width + ix) * C;
        const std::size_t tap = (ky * g.kernel + kx) * C;
        for (std::size_t c = 0; c < C; ++c) {
          if (dx) dx[src + c] += gout[c] * w[tap + c];
          if (dw) dw[tap + c] += gout[c] * x[src + c];
        }
      }
    }
  }
}

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

template <typename T>
void conv2d_direct(const ConvGeom& g, const T* x, const T* w, T* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < g.out_ch; ++co) {
        T s = 0;
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                ix >= static_cast<long>(g.width))
              continue;
            for (std::size_t ci = 0; ci < g.in_ch; ++ci)
              s += x[(iy * g.width + ix) * g.in_ch + ci] *
                   w[((ky * g.kernel + kx) * g.in_ch + ci) * g.out_ch + co];
          }
        y[(oy * ow + ox) * g.out_ch + co] = s;
      }
}

template <typename T>
void depthwise_conv(const ConvGeom& g, const T* x, const T* w, T* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), C = g.in_ch;
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t c = 0; c < C; ++c) {
        T s = 0;
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                ix >= static_cast<long>(g.width))
              continue;
            s += x[(iy * g.width + ix) * C + c] * w[(ky * g.kernel + kx) * C + c];
          }
        y[(oy * ow + ox) * C + c] = s;
      }
}

}  // namespace reference

#define PROVG_INSTANTIATE_KERNELS(T)                                                         \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,    \
                           bool);                                                            \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,    \
                           bool);                                                            \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,    \
                           bool);                                                            \
  template void im2col<T>(const ConvGeom&, const T*, T*);                                    \
  template void col2im<T>(const ConvGeom&, const T*, T*);                                    \
  template void depthwise_conv<T>(const ConvGeom&, const T*, const T*, T*);                  \
  template void depthwise_conv_backward<T>(const ConvGeom&, const T*, const T*, const T*, T*, \
                                           T*);                                              \
  template void reference::gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*,       \
                                      const T*, T*, bool);                                   \
  template void reference::gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*,       \
                                      const T*, T*, bool);                                   \
  template void reference::gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*,       \
                                      const T*, T*, bool);                                   \
  template void reference::conv2d_direct<T>(const ConvGeom&, const T*, const T*, T*);        \
  template void reference::depthwise_conv<T>(const ConvGeom&, const T*, const T*, T*);

PROVG_INSTANTIATE_KERNELS(float)
PROVG_INSTANTIATE_KERNELS(double)

#undef PROVG_INSTANTIATE_KERNELS

}  // namespace provg::kernels

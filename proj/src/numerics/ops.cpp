#include "provg/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace provg::nx {

namespace {

template <typename T>
using In = typename Op<T>::Inputs;
template <typename T>
using Gin = typename Op<T>::Grads;

template <typename T>
[[noreturn]] void shape_fail(Var<T> a, const std::string& what) {
  const auto scope = a.graph->current_scope();
  throw ShapeError(what + " (building node " + (scope.empty() ? "" : scope + ".") + "#" +
                   std::to_string(a.graph->size()) + ")");
}

template <typename T>
std::string dims(Var<T> v) {
  return shape_string({v.rows(), v.cols()});
}

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid() || a.graph != b.graph) throw Error("operands belong to different graphs");
  return *a.graph;
}

// ---- matmul ---------------------------------------------------------------

template <typename T>
class MatMul final : public Op<T> {
 public:
  explicit MatMul(bool trans_b) : trans_b_(trans_b) {}
  const char* name() const override { return trans_b_ ? "matmul_nt" : "matmul"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& a = *in[0];
    const auto& b = *in[1];
    const std::size_t m = a.rows(), k = a.cols(), n = out.cols();
    if (trans_b_)
      kernels::gemm_nt(m, n, k, a.data.data(), b.data.data(), out.data.data(), false);
    else
      kernels::gemm_nn(m, n, k, a.data.data(), b.data.data(), out.data.data(), false);
  }
  void backward(In<T> in, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    const auto& a = *in[0];
    const auto& b = *in[1];
    const std::size_t m = a.rows(), k = a.cols(), n = out.cols();
    if (gin[0]) {
      // dA = dC * B^T  (or dC * B when B was used transposed)
      if (trans_b_)
        kernels::gemm_nn(m, k, n, g.data(), b.data.data(), gin[0]->data(), true);
      else
        kernels::gemm_nt(m, k, n, g.data(), b.data.data(), gin[0]->data(), true);
    }
    if (gin[1]) {
      if (trans_b_)  // dB (n x k) = dC^T * A
        kernels::gemm_tn(n, k, m, g.data(), a.data.data(), gin[1]->data(), true);
      else  // dB (k x n) = A^T * dC
        kernels::gemm_tn(k, n, m, a.data.data(), g.data(), gin[1]->data(), true);
    }
  }

 private:
  bool trans_b_;
};

// ---- broadcast binary -----------------------------------------------------

enum class Bcast { kSame, kRow, kCol, kScalar };
enum class BinKind { kAdd, kSub, kMul, kDiv, kMin, kMax };

inline std::size_t bindex(Bcast mode, std::size_t i, std::size_t j, std::size_t n) {
  switch (mode) {
    case Bcast::kSame: return i * n + j;
    case Bcast::kRow: return j;
    case Bcast::kCol: return i;
    case Bcast::kScalar: return 0;
  }
  return 0;
}

template <typename T>
class Binary final : public Op<T> {
 public:
  Binary(BinKind kind, Bcast mode) : kind_(kind), mode_(mode) {}
  const char* name() const override {
    switch (kind_) {
      case BinKind::kAdd: return "add";
      case BinKind::kSub: return "sub";
      case BinKind::kMul: return "mul";
      case BinKind::kDiv: return "div";
      case BinKind::kMin: return "minimum";
      case BinKind::kMax: return "maximum";
    }
    return "binary";
  }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& a = in[0]->data;
    const auto& b = in[1]->data;
    const std::size_t m = out.rows(), n = out.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T x = a[i * n + j];
        const T y = b[bindex(mode_, i, j, n)];
        T r{};
        switch (kind_) {
          case BinKind::kAdd: r = x + y; break;
          case BinKind::kSub: r = x - y; break;
          case BinKind::kMul: r = x * y; break;
          case BinKind::kDiv: r = x / y; break;
          case BinKind::kMin: r = std::min(x, y); break;
          case BinKind::kMax: r = std::max(x, y); break;
        }
        out.data[i * n + j] = r;
      }
  }
  void backward(In<T> in, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    const auto& a = in[0]->data;
    const auto& b = in[1]->data;
    const std::size_t m = out.rows(), n = out.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t ai = i * n + j;
        const std::size_t bi = bindex(mode_, i, j, n);
        const T x = a[ai], y = b[bi], go = g[ai];
        T da{}, db{};
        switch (kind_) {
          case BinKind::kAdd: da = go; db = go; break;
          case BinKind::kSub: da = go; db = -go; break;
          case BinKind::kMul: da = go * y; db = go * x; break;
          case BinKind::kDiv: da = go / y; db = -go * x / (y * y); break;
          // Ties route the gradient to the first operand.
          case BinKind::kMin: (x <= y ? da : db) = go; break;
          case BinKind::kMax: (x >= y ? da : db) = go; break;
        }
        if (gin[0]) (*gin[0])[ai] += da;
        if (gin[1]) (*gin[1])[bi] += db;
      }
  }

 private:
  BinKind kind_;
  Bcast mode_;
};

template <typename T>
Var<T> binary(BinKind kind, Var<T> a, Var<T> b, bool allow_broadcast) {
  auto& g = graph_of(a, b);
  const std::size_t m = a.rows(), n = a.cols();
  Bcast mode;
  if (b.rows() == m && b.cols() == n)
    mode = Bcast::kSame;
  else if (allow_broadcast && b.rows() == 1 && b.cols() == n)
    mode = Bcast::kRow;
  else if (allow_broadcast && b.rows() == m && b.cols() == 1)
    mode = Bcast::kCol;
  else if (allow_broadcast && b.rows() == 1 && b.cols() == 1)
    mode = Bcast::kScalar;
  else
    shape_fail(a, std::string("elementwise operand shapes ") + dims(a) + " and " + dims(b) +
                      " are incompatible");
  return g.apply(std::make_unique<Binary<T>>(kind, mode), {a, b}, {m, n});
}

// ---- unary ----------------------------------------------------------------

enum class UnKind { kAffine, kSigmoid, kGelu, kRelu, kExp, kLog, kSquare, kSmoothL1 };

template <typename T>
class Unary final : public Op<T> {
 public:
  Unary(UnKind kind, double p0 = 0, double p1 = 0) : kind_(kind), p0_(p0), p1_(p1) {}
  const char* name() const override {
    switch (kind_) {
      case UnKind::kAffine: return "affine";
      case UnKind::kSigmoid: return "sigmoid";
      case UnKind::kGelu: return "gelu";
      case UnKind::kRelu: return "relu";
      case UnKind::kExp: return "exp";
      case UnKind::kLog: return "log";
      case UnKind::kSquare: return "square";
      case UnKind::kSmoothL1: return "smooth_l1";
    }
    return "unary";
  }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& a = in[0]->data;
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a[i]);
  }
  void backward(In<T> in, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const auto& a = in[0]->data;
    auto& d = *gin[0];
    for (std::size_t i = 0; i < a.size(); ++i) d[i] += g[i] * df(a[i], out.data[i]);
  }

 private:
  static constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

  T f(T x) const {
    switch (kind_) {
      case UnKind::kAffine: return static_cast<T>(p0_) * x + static_cast<T>(p1_);
      case UnKind::kSigmoid:
        return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      case UnKind::kGelu: {
        const T u = static_cast<T>(kGeluC) * (x + T(0.044715) * x * x * x);
        return T(0.5) * x * (T(1) + std::tanh(u));
      }
      case UnKind::kRelu: return x > 0 ? x : T(0);
      case UnKind::kExp: return std::exp(x);
      case UnKind::kLog: return std::log(x);
      case UnKind::kSquare: return x * x;
      case UnKind::kSmoothL1: {
        const T beta = static_cast<T>(p0_);
        const T ax = std::abs(x);
        return ax < beta ? T(0.5) * x * x / beta : ax - T(0.5) * beta;
      }
    }
    return x;
  }
  T df(T x, T y) const {
    switch (kind_) {
      case UnKind::kAffine: return static_cast<T>(p0_);
      case UnKind::kSigmoid: return y * (T(1) - y);
      case UnKind::kGelu: {
        const T c = static_cast<T>(kGeluC);
        const T u = c * (x + T(0.044715) * x * x * x);
        const T t = std::tanh(u);
        const T du = c * (T(1) + T(3 * 0.044715) * x * x);
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
      }
      case UnKind::kRelu: return x > 0 ? T(1) : T(0);
      case UnKind::kExp: return y;
      case UnKind::kLog: return T(1) / x;
      case UnKind::kSquare: return T(2) * x;
      case UnKind::kSmoothL1: {
        const T beta = static_cast<T>(p0_);
        if (std::abs(x) < beta) return x / beta;
        return x > 0 ? T(1) : T(-1);
      }
    }
    return T(1);
  }

  UnKind kind_;
  double p0_, p1_;
};

template <typename T>
Var<T> unary(UnKind kind, Var<T> a, double p0 = 0, double p1 = 0) {
  if (!a.valid()) throw Error("invalid variable");
  return a.graph->apply(std::make_unique<Unary<T>>(kind, p0, p1), {a}, {a.rows(), a.cols()});
}

// ---- softmax --------------------------------------------------------------

template <typename T>
class SoftmaxRows final : public Op<T> {
 public:
  explicit SoftmaxRows(bool log_space) : log_(log_space) {}
  const char* name() const override { return log_ ? "log_softmax" : "softmax"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& a = in[0]->data;
    const std::size_t m = out.rows(), n = out.cols();
    for (std::size_t i = 0; i < m; ++i) {
      const T* x = a.data() + i * n;
      T* y = out.data.data() + i * n;
      const T mx = *std::max_element(x, x + n);
      T s = 0;
      for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
      if (log_) {
        const T ls = std::log(s) + mx;
        for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - ls;
      } else {
        for (std::size_t j = 0; j < n; ++j) y[j] = std::exp(x[j] - mx) / s;
      }
    }
  }
  void backward(In<T>, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t m = out.rows(), n = out.cols();
    auto& d = *gin[0];
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = out.data.data() + i * n;
      const T* go = g.data() + i * n;
      if (log_) {
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += go[j];
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += go[j] - std::exp(y[j]) * s;
      } else {
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += go[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += y[j] * (go[j] - s);
      }
    }
  }

 private:
  bool log_;
};

// ---- reductions -----------------------------------------------------------

enum class RedKind { kSumAll, kMeanAll, kOverRows, kOverCols };

template <typename T>
class Reduce final : public Op<T> {
 public:
  explicit Reduce(RedKind kind) : kind_(kind) {}
  const char* name() const override {
    switch (kind_) {
      case RedKind::kSumAll: return "sum";
      case RedKind::kMeanAll: return "mean";
      case RedKind::kOverRows: return "mean_over_rows";
      case RedKind::kOverCols: return "mean_over_cols";
    }
    return "reduce";
  }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& x = *in[0];
    const std::size_t m = x.rows(), n = x.cols();
    std::fill(out.data.begin(), out.data.end(), T(0));
    switch (kind_) {
      case RedKind::kSumAll:
      case RedKind::kMeanAll: {
        T s = 0;
        for (T v : x.data) s += v;
        out.data[0] = kind_ == RedKind::kSumAll ? s : s / static_cast<T>(m * n);
        break;
      }
      case RedKind::kOverRows:
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) out.data[j] += x.data[i * n + j];
        for (auto& v : out.data) v /= static_cast<T>(m);
        break;
      case RedKind::kOverCols:
        for (std::size_t i = 0; i < m; ++i) {
          T s = 0;
          for (std::size_t j = 0; j < n; ++j) s += x.data[i * n + j];
          out.data[i] = s / static_cast<T>(n);
        }
        break;
    }
  }
  void backward(In<T> in, const Tensor<T>&, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const auto& x = *in[0];
    const std::size_t m = x.rows(), n = x.cols();
    auto& d = *gin[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T v{};
        switch (kind_) {
          case RedKind::kSumAll: v = g[0]; break;
          case RedKind::kMeanAll: v = g[0] / static_cast<T>(m * n); break;
          case RedKind::kOverRows: v = g[j] / static_cast<T>(m); break;
          case RedKind::kOverCols: v = g[i] / static_cast<T>(n); break;
        }
        d[i * n + j] += v;
      }
  }

 private:
  RedKind kind_;
};

// ---- layout ---------------------------------------------------------------

template <typename T>
class Transpose final : public Op<T> {
 public:
  const char* name() const override { return "transpose"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& x = *in[0];
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = x.data[i * n + j];
  }
  void backward(In<T> in, const Tensor<T>&, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const auto& x = *in[0];
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += g[j * m + i];
  }
};

template <typename T>
class Concat final : public Op<T> {
 public:
  explicit Concat(bool along_cols) : cols_(along_cols) {}
  const char* name() const override { return cols_ ? "concat_cols" : "concat_rows"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    if (!cols_) {
      std::size_t off = 0;
      for (const auto* t : in) {
        std::copy(t->data.begin(), t->data.end(), out.data.begin() + static_cast<long>(off));
        off += t->data.size();
      }
      return;
    }
    const std::size_t m = out.rows(), n = out.cols();
    std::size_t c0 = 0;
    for (const auto* t : in) {
      const std::size_t w = t->cols();
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(t->data.begin() + static_cast<long>(i * w), w,
                    out.data.begin() + static_cast<long>(i * n + c0));
      c0 += w;
    }
  }
  void backward(In<T> in, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    const std::size_t m = out.rows(), n = out.cols();
    std::size_t off = 0;
    for (std::size_t p = 0; p < in.size(); ++p) {
      const auto* t = in[p];
      if (cols_) {
        const std::size_t w = t->cols();
        if (gin[p])
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) (*gin[p])[i * w + j] += g[i * n + off + j];
        off += w;
      } else {
        if (gin[p])
          for (std::size_t i = 0; i < t->data.size(); ++i) (*gin[p])[i] += g[off + i];
        off += t->data.size();
      }
    }
  }

 private:
  bool cols_;
};

template <typename T>
class Slice final : public Op<T> {
 public:
  Slice(bool along_cols, std::size_t start) : cols_(along_cols), start_(start) {}
  const char* name() const override { return cols_ ? "slice_cols" : "slice_rows"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& x = *in[0];
    const std::size_t n = x.cols(), m = out.rows(), w = out.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.data[i * w + j] = cols_ ? x.data[i * n + start_ + j] : x.data[(start_ + i) * n + j];
  }
  void backward(In<T> in, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t n = in[0]->cols(), m = out.rows(), w = out.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t src = cols_ ? i * n + start_ + j : (start_ + i) * n + j;
        (*gin[0])[src] += g[i * w + j];
      }
  }

 private:
  bool cols_;
  std::size_t start_;
};

template <typename T>
class GatherRows final : public Op<T> {
 public:
  explicit GatherRows(std::vector<int> ids) : ids_(std::move(ids)) {}
  const char* name() const override { return "gather_rows"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const std::size_t n = in[0]->cols();
    for (std::size_t r = 0; r < ids_.size(); ++r)
      std::copy_n(in[0]->data.begin() + static_cast<long>(ids_[r] * n), n,
                  out.data.begin() + static_cast<long>(r * n));
  }
  void backward(In<T> in, const Tensor<T>&, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t n = in[0]->cols();
    for (std::size_t r = 0; r < ids_.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) (*gin[0])[ids_[r] * n + j] += g[r * n + j];
  }

 private:
  std::vector<int> ids_;
};

template <typename T>
class LayerNormRows final : public Op<T> {
 public:
  explicit LayerNormRows(double eps) : eps_(eps) {}
  const char* name() const override { return "layer_norm"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const auto& x = *in[0];
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i) {
      const T* r = x.data.data() + i * n;
      T mu = 0;
      for (std::size_t j = 0; j < n; ++j) mu += r[j];
      mu /= static_cast<T>(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps_));
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = (r[j] - mu) * inv;
    }
  }
  void backward(In<T> in, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const auto& x = *in[0];
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i) {
      const T* r = x.data.data() + i * n;
      T mu = 0;
      for (std::size_t j = 0; j < n; ++j) mu += r[j];
      mu /= static_cast<T>(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps_));
      const T* y = out.data.data() + i * n;
      const T* go = g.data() + i * n;
      T mg = 0, mgy = 0;
      for (std::size_t j = 0; j < n; ++j) {
        mg += go[j];
        mgy += go[j] * y[j];
      }
      mg /= static_cast<T>(n);
      mgy /= static_cast<T>(n);
      for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += inv * (go[j] - mg - y[j] * mgy);
    }
  }

 private:
  double eps_;
};

// ---- spatial --------------------------------------------------------------

template <typename T>
class Conv2d final : public Op<T> {
 public:
  explicit Conv2d(const ConvGeom& g) : g_(g) {}
  const char* name() const override { return "conv2d"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const std::size_t outs = g_.out_h() * g_.out_w();
    if (is_pointwise()) {
      kernels::gemm_nn(outs, g_.out_ch, g_.in_ch, in[0]->data.data(), in[1]->data.data(),
                       out.data.data(), false);
      return;
    }
    std::vector<T> cols(outs * g_.patch());
    kernels::im2col(g_, in[0]->data.data(), cols.data());
    kernels::gemm_nn(outs, g_.out_ch, g_.patch(), cols.data(), in[1]->data.data(),
                     out.data.data(), false);
  }
  void backward(In<T> in, const Tensor<T>&, const std::vector<T>& g, Gin<T> gin) const override {
    const std::size_t outs = g_.out_h() * g_.out_w();
    if (is_pointwise()) {
      if (gin[0])
        kernels::gemm_nt(outs, g_.in_ch, g_.out_ch, g.data(), in[1]->data.data(),
                         gin[0]->data(), true);
      if (gin[1])
        kernels::gemm_tn(g_.in_ch, g_.out_ch, outs, in[0]->data.data(), g.data(),
                         gin[1]->data(), true);
      return;
    }
    if (gin[1]) {
      std::vector<T> cols(outs * g_.patch());
      kernels::im2col(g_, in[0]->data.data(), cols.data());
      kernels::gemm_tn(g_.patch(), g_.out_ch, outs, cols.data(), g.data(), gin[1]->data(), true);
    }
    if (gin[0]) {
      std::vector<T> dcols(outs * g_.patch());
      kernels::gemm_nt(outs, g_.patch(), g_.out_ch, g.data(), in[1]->data.data(), dcols.data(),
                       false);
      kernels::col2im(g_, dcols.data(), gin[0]->data());
    }
  }

 private:
  bool is_pointwise() const { return g_.kernel == 1 && g_.stride == 1 && g_.pad == 0; }
  ConvGeom g_;
};

template <typename T>
class DepthwiseConv2d final : public Op<T> {
 public:
  explicit DepthwiseConv2d(const ConvGeom& g) : g_(g) {}
  const char* name() const override { return "depthwise_conv2d"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    kernels::depthwise_conv(g_, in[0]->data.data(), in[1]->data.data(), out.data.data());
  }
  void backward(In<T> in, const Tensor<T>&, const std::vector<T>& g, Gin<T> gin) const override {
    kernels::depthwise_conv_backward(g_, in[0]->data.data(), in[1]->data.data(), g.data(),
                                     gin[0] ? gin[0]->data() : nullptr,
                                     gin[1] ? gin[1]->data() : nullptr);
  }

 private:
  ConvGeom g_;
};

template <typename T>
class UpsampleNearest2x final : public Op<T> {
 public:
  UpsampleNearest2x(std::size_t h, std::size_t w) : h_(h), w_(w) {}
  const char* name() const override { return "upsample_nearest2x"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const std::size_t C = out.cols(), W2 = 2 * w_;
    for (std::size_t y = 0; y < 2 * h_; ++y)
      for (std::size_t x = 0; x < W2; ++x)
        std::copy_n(in[0]->data.begin() + static_cast<long>(((y / 2) * w_ + x / 2) * C), C,
                    out.data.begin() + static_cast<long>((y * W2 + x) * C));
  }
  void backward(In<T>, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t C = out.cols(), W2 = 2 * w_;
    for (std::size_t y = 0; y < 2 * h_; ++y)
      for (std::size_t x = 0; x < W2; ++x) {
        T* d = gin[0]->data() + ((y / 2) * w_ + x / 2) * C;
        const T* s = g.data() + (y * W2 + x) * C;
        for (std::size_t c = 0; c < C; ++c) d[c] += s[c];
      }
  }

 private:
  std::size_t h_, w_;
};

struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

// Half-pixel source coordinates for a x2 resize, as in align_corners=false.
inline Tap bilinear_tap(std::size_t o, std::size_t size) {
  double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
  if (src < 0) src = 0;
  const auto i0 = static_cast<std::size_t>(src);
  const std::size_t i1 = i0 + 1 < size ? i0 + 1 : i0;
  const double l1 = src - static_cast<double>(i0);
  return {i0, i1, 1.0 - l1, l1};
}

template <typename T>
class UpsampleBilinear2x final : public Op<T> {
 public:
  UpsampleBilinear2x(std::size_t h, std::size_t w) : h_(h), w_(w) {}
  const char* name() const override { return "upsample_bilinear2x"; }
  void forward(In<T> in, Tensor<T>& out) const override {
    const std::size_t C = out.cols(), W2 = 2 * w_;
    const T* src = in[0]->data.data();
    for (std::size_t y = 0; y < 2 * h_; ++y) {
      const Tap ty = bilinear_tap(y, h_);
      for (std::size_t x = 0; x < W2; ++x) {
        const Tap tx = bilinear_tap(x, w_);
        const T w00 = static_cast<T>(ty.w0 * tx.w0), w01 = static_cast<T>(ty.w0 * tx.w1);
        const T w10 = static_cast<T>(ty.w1 * tx.w0), w11 = static_cast<T>(ty.w1 * tx.w1);
        const T* p00 = src + (ty.i0 * w_ + tx.i0) * C;
        const T* p01 = src + (ty.i0 * w_ + tx.i1) * C;
        const T* p10 = src + (ty.i1 * w_ + tx.i0) * C;
        const T* p11 = src + (ty.i1 * w_ + tx.i1) * C;
        T* d = out.data.data() + (y * W2 + x) * C;
        for (std::size_t c = 0; c < C; ++c)
          d[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  void backward(In<T>, const Tensor<T>& out, const std::vector<T>& g, Gin<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t C = out.cols(), W2 = 2 * w_;
    T* dst = gin[0]->data();
    for (std::size_t y = 0; y < 2 * h_; ++y) {
      const Tap ty = bilinear_tap(y, h_);
      for (std::size_t x = 0; x < W2; ++x) {
        const Tap tx = bilinear_tap(x, w_);
        const T w00 = static_cast<T>(ty.w0 * tx.w0), w01 = static_cast<T>(ty.w0 * tx.w1);
        const T w10 = static_cast<T>(ty.w1 * tx.w0), w11 = static_cast<T>(ty.w1 * tx.w1);
        const T* s = g.data() + (y * W2 + x) * C;
        T* p00 = dst + (ty.i0 * w_ + tx.i0) * C;
        T* p01 = dst + (ty.i0 * w_ + tx.i1) * C;
        T* p10 = dst + (ty.i1 * w_ + tx.i0) * C;
        T* p11 = dst + (ty.i1 * w_ + tx.i1) * C;
        for (std::size_t c = 0; c < C; ++c) {
          p00[c] += w00 * s[c];
          p01[c] += w01 * s[c];
          p10[c] += w10 * s[c];
          p11[c] += w11 * s[c];
        }
      }
    }
  }

 private:
  std::size_t h_, w_;
};

template <typename T>
void require_spatial(Var<T> x, std::size_t h, std::size_t w, std::size_t c, const char* op) {
  if (x.rows() != h * w || (c != 0 && x.cols() != c))
    shape_fail(x, std::string(op) + ": input " + dims(x) + " is not a " + std::to_string(h) + "x" +
                      std::to_string(w) + (c ? "x" + std::to_string(c) : std::string()) + " map");
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  if (a.cols() != b.rows()) shape_fail(a, "matmul inner extents differ: " + dims(a) + " * " + dims(b));
  return g.apply(std::make_unique<MatMul<T>>(false), {a, b}, {a.rows(), b.cols()});
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  if (a.cols() != b.cols())
    shape_fail(a, "matmul_nt inner extents differ: " + dims(a) + " * " + dims(b) + "^T");
  return g.apply(std::make_unique<MatMul<T>>(true), {a, b}, {a.rows(), b.rows()});
}

template <typename T> Var<T> add(Var<T> a, Var<T> b) { return binary(BinKind::kAdd, a, b, true); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return binary(BinKind::kSub, a, b, true); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return binary(BinKind::kMul, a, b, true); }
template <typename T> Var<T> div(Var<T> a, Var<T> b) { return binary(BinKind::kDiv, a, b, true); }
template <typename T> Var<T> minimum(Var<T> a, Var<T> b) { return binary(BinKind::kMin, a, b, false); }
template <typename T> Var<T> maximum(Var<T> a, Var<T> b) { return binary(BinKind::kMax, a, b, false); }

template <typename T>
Var<T> affine(Var<T> a, double scale, double shift) {
  return unary(UnKind::kAffine, a, scale, shift);
}
template <typename T> Var<T> sigmoid(Var<T> a) { return unary(UnKind::kSigmoid, a); }
template <typename T> Var<T> gelu(Var<T> a) { return unary(UnKind::kGelu, a); }
template <typename T> Var<T> relu(Var<T> a) { return unary(UnKind::kRelu, a); }
template <typename T> Var<T> exp(Var<T> a) { return unary(UnKind::kExp, a); }
template <typename T> Var<T> log(Var<T> a) { return unary(UnKind::kLog, a); }
template <typename T> Var<T> square(Var<T> a) { return unary(UnKind::kSquare, a); }
template <typename T>
Var<T> smooth_l1(Var<T> a, double beta) {
  if (!(beta > 0)) shape_fail(a, "smooth_l1 beta must be positive");
  return unary(UnKind::kSmoothL1, a, beta);
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  return a.graph->apply(std::make_unique<SoftmaxRows<T>>(false), {a}, {a.rows(), a.cols()});
}
template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
  return a.graph->apply(std::make_unique<SoftmaxRows<T>>(true), {a}, {a.rows(), a.cols()});
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  return a.graph->apply(std::make_unique<Reduce<T>>(RedKind::kSumAll), {a}, {1, 1});
}
template <typename T>
Var<T> mean_all(Var<T> a) {
  return a.graph->apply(std::make_unique<Reduce<T>>(RedKind::kMeanAll), {a}, {1, 1});
}
template <typename T>
Var<T> mean_over_rows(Var<T> a) {
  return a.graph->apply(std::make_unique<Reduce<T>>(RedKind::kOverRows), {a}, {1, a.cols()});
}
template <typename T>
Var<T> mean_over_cols(Var<T> a) {
  return a.graph->apply(std::make_unique<Reduce<T>>(RedKind::kOverCols), {a}, {a.rows(), 1});
}

template <typename T>
Var<T> transpose(Var<T> a) {
  return a.graph->apply(std::make_unique<Transpose<T>>(), {a}, {a.cols(), a.rows()});
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  std::size_t w = 0;
  for (const auto& p : parts) {
    graph_of(parts[0], p);
    if (p.rows() != parts[0].rows())
      shape_fail(p, "concat_cols row counts differ: " + dims(parts[0]) + " vs " + dims(p));
    w += p.cols();
  }
  return parts[0].graph->apply(std::make_unique<Concat<T>>(true), parts, {parts[0].rows(), w});
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  std::size_t h = 0;
  for (const auto& p : parts) {
    graph_of(parts[0], p);
    if (p.cols() != parts[0].cols())
      shape_fail(p, "concat_rows column counts differ: " + dims(parts[0]) + " vs " + dims(p));
    h += p.rows();
  }
  return parts[0].graph->apply(std::make_unique<Concat<T>>(false), parts, {h, parts[0].cols()});
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t count) {
  if (count == 0 || start + count > a.cols())
    shape_fail(a, "slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
                      ") out of range for " + dims(a));
  return a.graph->apply(std::make_unique<Slice<T>>(true, start), {a}, {a.rows(), count});
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count) {
  if (count == 0 || start + count > a.rows())
    shape_fail(a, "slice_rows [" + std::to_string(start) + ", +" + std::to_string(count) +
                      ") out of range for " + dims(a));
  return a.graph->apply(std::make_unique<Slice<T>>(false, start), {a}, {count, a.cols()});
}

template <typename T>
Var<T> gather_rows(Var<T> table, const std::vector<int>& ids) {
  if (ids.empty()) shape_fail(table, "gather_rows with no ids");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
      shape_fail(table, "gather_rows id " + std::to_string(id) + " out of range for " + dims(table));
  return table.graph->apply(std::make_unique<GatherRows<T>>(ids), {table}, {ids.size(), table.cols()});
}

template <typename T>
Var<T> layer_norm_rows(Var<T> a, double eps) {
  return a.graph->apply(std::make_unique<LayerNormRows<T>>(eps), {a}, {a.rows(), a.cols()});
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, const ConvGeom& geom) {
  auto& g = graph_of(x, w);
  require_spatial(x, geom.height, geom.width, geom.in_ch, "conv2d");
  if (geom.kernel == 0 || geom.stride == 0 || geom.height + 2 * geom.pad < geom.kernel ||
      geom.width + 2 * geom.pad < geom.kernel)
    shape_fail(x, "conv2d geometry is degenerate");
  if (w.rows() != geom.patch() || w.cols() != geom.out_ch)
    shape_fail(w, "conv2d weight " + dims(w) + " expected " +
                      shape_string({geom.patch(), geom.out_ch}));
  return g.apply(std::make_unique<Conv2d<T>>(geom), {x, w}, {geom.out_h() * geom.out_w(), geom.out_ch});
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> w, const ConvGeom& geom) {
  auto& g = graph_of(x, w);
  require_spatial(x, geom.height, geom.width, geom.in_ch, "depthwise_conv2d");
  if (geom.out_ch != geom.in_ch) shape_fail(x, "depthwise_conv2d needs out_ch == in_ch");
  if (w.rows() != geom.kernel * geom.kernel || w.cols() != geom.in_ch)
    shape_fail(w, "depthwise_conv2d weight " + dims(w) + " expected " +
                      shape_string({geom.kernel * geom.kernel, geom.in_ch}));
  return g.apply(std::make_unique<DepthwiseConv2d<T>>(geom), {x, w},
                 {geom.out_h() * geom.out_w(), geom.in_ch});
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> x, std::size_t height, std::size_t width) {
  require_spatial(x, height, width, 0, "upsample_nearest2x");
  return x.graph->apply(std::make_unique<UpsampleNearest2x<T>>(height, width), {x},
                        {4 * height * width, x.cols()});
}

template <typename T>
Var<T> upsample_bilinear2x(Var<T> x, std::size_t height, std::size_t width) {
  require_spatial(x, height, width, 0, "upsample_bilinear2x");
  return x.graph->apply(std::make_unique<UpsampleBilinear2x<T>>(height, width), {x},
                        {4 * height * width, x.cols()});
}

#define PROVG_INSTANTIATE_OPS(T)                                                  \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                      \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                   \
  template Var<T> add<T>(Var<T>, Var<T>);                                         \
  template Var<T> sub<T>(Var<T>, Var<T>);                                         \
  template Var<T> mul<T>(Var<T>, Var<T>);                                         \
  template Var<T> div<T>(Var<T>, Var<T>);                                         \
  template Var<T> minimum<T>(Var<T>, Var<T>);                                     \
  template Var<T> maximum<T>(Var<T>, Var<T>);                                     \
  template Var<T> affine<T>(Var<T>, double, double);                              \
  template Var<T> sigmoid<T>(Var<T>);                                             \
  template Var<T> gelu<T>(Var<T>);                                                \
  template Var<T> relu<T>(Var<T>);                                                \
  template Var<T> exp<T>(Var<T>);                                                 \
  template Var<T> log<T>(Var<T>);                                                 \
  template Var<T> square<T>(Var<T>);                                              \
  template Var<T> smooth_l1<T>(Var<T>, double);                                   \
  template Var<T> softmax_rows<T>(Var<T>);                                        \
  template Var<T> log_softmax_rows<T>(Var<T>);                                    \
  template Var<T> sum_all<T>(Var<T>);                                             \
  template Var<T> mean_all<T>(Var<T>);                                            \
  template Var<T> mean_over_rows<T>(Var<T>);                                      \
  template Var<T> mean_over_cols<T>(Var<T>);                                      \
  template Var<T> transpose<T>(Var<T>);                                           \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                     \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                     \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);                \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                \
  template Var<T> gather_rows<T>(Var<T>, const std::vector<int>&);                \
  template Var<T> layer_norm_rows<T>(Var<T>, double);                             \
  template Var<T> conv2d<T>(Var<T>, Var<T>, const ConvGeom&);                     \
  template Var<T> depthwise_conv2d<T>(Var<T>, Var<T>, const ConvGeom&);           \
  template Var<T> upsample_nearest2x<T>(Var<T>, std::size_t, std::size_t);        \
  template Var<T> upsample_bilinear2x<T>(Var<T>, std::size_t, std::size_t);

PROVG_INSTANTIATE_OPS(float)
PROVG_INSTANTIATE_OPS(double)

#undef PROVG_INSTANTIATE_OPS

}  // namespace provg::nx

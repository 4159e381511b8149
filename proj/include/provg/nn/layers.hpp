#pragma once

#include <cstddef>
#include <string>

#include "provg/numerics/graph.hpp"
#include "provg/numerics/ops.hpp"
#include "provg/numerics/params.hpp"

namespace provg::nn {

using nx::Graph;
using nx::Init;
using nx::ParamStore;
using nx::Var;

/// y = x W + b with W (in x out).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         Init init = Init::kXavier, double gain = 1.0, bool bias = true);

  Var<T> operator()(Graph<T>& g, Var<T> x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  ParamStore<T>* store_ = nullptr;
  std::size_t weight_ = 0, bias_ = 0, in_ = 0, out_ = 0;
  bool has_bias_ = true;
};

/// Square-kernel convolution with bias over (H*W x C) maps.
template <typename T>
class Conv {
 public:
  Conv() = default;
  Conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
       std::size_t kernel, std::size_t stride, std::size_t pad, Init init = Init::kXavier,
       double gain = 1.0);

  Var<T> operator()(Graph<T>& g, Var<T> x, std::size_t height, std::size_t width) const;
  std::size_t out_side(std::size_t side) const { return (side + 2 * pad_ - kernel_) / stride_ + 1; }

 private:
  ParamStore<T>* store_ = nullptr;
  std::size_t weight_ = 0, bias_ = 0, in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
};

/// Row-wise layer normalization with learned gain and shift.
template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t width);
  Var<T> operator()(Graph<T>& g, Var<T> x) const;

 private:
  ParamStore<T>* store_ = nullptr;
  std::size_t gain_ = 0, shift_ = 0;
};

}  // namespace provg::nn

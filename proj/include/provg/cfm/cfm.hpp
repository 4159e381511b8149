#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "provg/encoders/encoders.hpp"
#include "provg/nn/layers.hpp"

namespace provg::cfm {

using nx::Graph;
using nx::ParamStore;
using nx::Var;

template <typename T>
struct FusedPyramid {
  std::array<Var<T>, 4> lateral;
  std::array<Var<T>, 4> down;
  std::array<Var<T>, 4> up;
  std::array<std::size_t, 4> sides{};
};

/// x + conv3(gelu(conv3(x))). The second convolution starts at zero, so the
/// block is the identity until trained.
template <typename T>
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(ParamStore<T>& store, const std::string& name, std::size_t channels);
  Var<T> operator()(Graph<T>& g, Var<T> x, std::size_t side) const;

 private:
  std::size_t channels_ = 0;
  nn::Conv<T> first_, second_;
};

template <typename T>
class CrossScaleFusion {
 public:
  CrossScaleFusion(ParamStore<T>& store, const nn::ModelDims& dims);

  std::array<Var<T>, 4> lateral(Graph<T>& g, const enc::FeaturePyramid<T>& stages) const;
  std::array<Var<T>, 4> top_down(Graph<T>& g, const std::array<Var<T>, 4>& lateral,
                                 const std::array<std::size_t, 4>& sides) const;
  std::array<Var<T>, 4> bottom_up(Graph<T>& g, const std::array<Var<T>, 4>& down,
                                  const std::array<std::size_t, 4>& sides) const;

  /// Full fusion. With enabled=false every up stage is its lateral projection.
  FusedPyramid<T> operator()(Graph<T>& g, const enc::FeaturePyramid<T>& stages,
                             bool enabled = true) const;

  const FusionBlock<T>& top_down_block(std::size_t i) const { return td_blocks_.at(i); }
  const FusionBlock<T>& bottom_up_block(std::size_t i) const { return bu_blocks_.at(i); }

 private:
  nn::ModelDims dims_;
  std::array<nn::Conv<T>, 4> lateral_;
  std::array<FusionBlock<T>, 4> td_blocks_;  // used for stages 0..2
  std::array<FusionBlock<T>, 4> bu_blocks_;  // used for stages 1..3
  std::array<nn::Conv<T>, 4> reduce_;        // stride-2 3x3, used for stages 1..3
};

}  // namespace provg::cfm

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "provg/lingparse/lingparse.hpp"
#include "provg/nn/dims.hpp"
#include "provg/nn/layers.hpp"

namespace provg::enc {

using nn::ModelDims;
using nx::Graph;
using nx::ParamStore;
using nx::Var;

/// Per-token features of the three cues, each (N x D).
template <typename T>
struct CueFeatures {
  Var<T> context;
  Var<T> spatial;
  Var<T> attribute;
};

/// Four backbone stages V_1..V_4, each (side^2 x C_i); stage 0 is finest.
template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, 4> stages;
  std::array<std::size_t, 4> sides{};
};

/// Small pre-norm transformer encoder standing in for a pretrained language
/// model. All cues share one instance.
template <typename T>
class TextEncoder {
 public:
  TextEncoder(ParamStore<T>& store, const ModelDims& dims);

  /// (N x D) features for one token sequence; throws on out-of-range ids.
  Var<T> encode(Graph<T>& g, const std::vector<int>& tokens) const;
  CueFeatures<T> encode_cues(Graph<T>& g, const lang::LinguisticCues& cues) const;

 private:
  struct Layer {
    nn::LayerNorm<T> norm1, norm2;
    nn::Linear<T> query, key, value, out, ffn_in, ffn_out;
  };

  ParamStore<T>* store_;
  ModelDims dims_;
  std::size_t token_table_ = 0, position_table_ = 0;
  std::vector<Layer> layers_;
  nn::LayerNorm<T> final_norm_;
};

/// Hierarchical convolutional backbone: 4x4 patch embedding, then per stage
/// a 2x2 strided projection and a depthwise-separable mixing block.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder(ParamStore<T>& store, const ModelDims& dims);

  /// Patch embedding of an (S*S x 3) image before any spatial mixing.
  Var<T> patch_embed(Graph<T>& g, Var<T> image) const;
  /// Stage 0 from an image.
  Var<T> first_stage(Graph<T>& g, Var<T> image) const;
  /// Stage i >= 1 from the (possibly modulated) output of stage i - 1.
  Var<T> next_stage(Graph<T>& g, std::size_t i, Var<T> previous) const;
  /// All four stages without any language modulation.
  FeaturePyramid<T> encode(Graph<T>& g, Var<T> image) const;

  const ModelDims& dims() const { return dims_; }

 private:
  struct Mixer {
    std::size_t depthwise = 0, depthwise_bias = 0;
    nn::Linear<T> pointwise;
  };
  Var<T> mix(Graph<T>& g, std::size_t stage, Var<T> x) const;

  ParamStore<T>* store_;
  ModelDims dims_;
  nn::Conv<T> embed_;
  nn::LayerNorm<T> embed_norm_;
  std::array<nn::Conv<T>, 4> downsample_;  // index 0 unused
  std::array<nn::LayerNorm<T>, 4> down_norm_;
  std::array<Mixer, 4> mixers_;
};

/// Converts an interleaved RGB image (S*S*3 values in [0,1]) into a graph input.
template <typename T>
Var<T> image_input(Graph<T>& g, const std::vector<float>& rgb, std::size_t side,
                   const std::string& name = "image");

}  // namespace provg::enc

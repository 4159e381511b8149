#include "provg/encoders/encoders.hpp"

#include <cmath>

#include "provg/numerics/ops.hpp"

namespace provg::enc {

using nx::Init;

template <typename T>
TextEncoder<T>::TextEncoder(ParamStore<T>& store, const ModelDims& dims)
    : store_(&store), dims_(dims) {
  const std::size_t D = dims.text_dim;
  token_table_ = store.add({"text.token_embedding", dims.vocab_size(), D, Init::kNormal, 0.5, false});
  position_table_ = store.add({"text.position_embedding", dims.max_tokens, D, Init::kNormal, 0.5, false});
  for (std::size_t l = 0; l < dims.text_layers; ++l) {
    const std::string p = "text.layer" + std::to_string(l);
    Layer layer{
        nn::LayerNorm<T>(store, p + ".norm1", D),
        nn::LayerNorm<T>(store, p + ".norm2", D),
        nn::Linear<T>(store, p + ".query", D, D),
        nn::Linear<T>(store, p + ".key", D, D),
        nn::Linear<T>(store, p + ".value", D, D),
        nn::Linear<T>(store, p + ".out", D, D),
        nn::Linear<T>(store, p + ".ffn_in", D, dims.text_ffn),
        nn::Linear<T>(store, p + ".ffn_out", dims.text_ffn, D),
    };
    layers_.push_back(std::move(layer));
  }
  final_norm_ = nn::LayerNorm<T>(store, "text.final_norm", D);
}

template <typename T>
Var<T> TextEncoder<T>::encode(Graph<T>& g, const std::vector<int>& tokens) const {
  auto scope = g.scope("text");
  if (tokens.empty() || tokens.size() > dims_.max_tokens)
    throw ShapeError("text encoder expects 1.." + std::to_string(dims_.max_tokens) + " tokens");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= dims_.vocab_size())
      throw Error("token id " + std::to_string(t) + " outside the vocabulary");
  const std::size_t n = tokens.size();
  const std::size_t D = dims_.text_dim, H = dims_.text_heads, hd = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  auto x = nx::add(nx::gather_rows(g.param(*store_, token_table_), tokens),
                   nx::slice_rows(g.param(*store_, position_table_), 0, n));
  for (const auto& layer : layers_) {
    auto h = layer.norm1(g, x);
    auto q = layer.query(g, h), k = layer.key(g, h), v = layer.value(g, h);
    std::vector<Var<T>> heads;
    for (std::size_t head = 0; head < H; ++head) {
      auto qh = nx::slice_cols(q, head * hd, hd);
      auto kh = nx::slice_cols(k, head * hd, hd);
      auto vh = nx::slice_cols(v, head * hd, hd);
      auto att = nx::softmax_rows(nx::affine(nx::matmul_nt(qh, kh), scale));
      heads.push_back(nx::matmul(att, vh));
    }
    auto merged = H == 1 ? heads[0] : nx::concat_cols(heads);
    x = nx::add(x, layer.out(g, merged));
    auto f = layer.ffn_out(g, nx::gelu(layer.ffn_in(g, layer.norm2(g, x))));
    x = nx::add(x, f);
  }
  return final_norm_(g, x);
}

template <typename T>
CueFeatures<T> TextEncoder<T>::encode_cues(Graph<T>& g, const lang::LinguisticCues& cues) const {
  CueFeatures<T> f;
  {
    auto s = g.scope("context");
    f.context = encode(g, cues.context.tokens);
  }
  {
    auto s = g.scope("spatial");
    f.spatial = encode(g, cues.spatial.tokens);
  }
  {
    auto s = g.scope("attribute");
    f.attribute = encode(g, cues.attribute.tokens);
  }
  return f;
}

template <typename T>
ImageEncoder<T>::ImageEncoder(ParamStore<T>& store, const ModelDims& dims)
    : store_(&store), dims_(dims) {
  dims.validate();
  const auto& C = dims.channels;
  embed_ = nn::Conv<T>(store, "image.patch_embed", 3, C[0], dims.patch, dims.patch, 0);
  embed_norm_ = nn::LayerNorm<T>(store, "image.patch_norm", C[0]);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string p = "image.stage" + std::to_string(i + 1);
    if (i > 0) {
      downsample_[i] = nn::Conv<T>(store, p + ".downsample", C[i - 1], C[i], 2, 2, 0);
      down_norm_[i] = nn::LayerNorm<T>(store, p + ".down_norm", C[i]);
    }
    mixers_[i].depthwise = store.add({p + ".mix.depthwise", 9, C[i], Init::kNormal, 1.0 / 3.0, true});
    mixers_[i].depthwise_bias = store.add({p + ".mix.depthwise_bias", 1, C[i], Init::kZeros, 0.0, false});
    mixers_[i].pointwise = nn::Linear<T>(store, p + ".mix.pointwise", C[i], C[i]);
  }
}

template <typename T>
Var<T> ImageEncoder<T>::mix(Graph<T>& g, std::size_t stage, Var<T> x) const {
  const std::size_t side = dims_.stage_side(stage), C = dims_.channels[stage];
  const auto& m = mixers_[stage];
  nx::ConvGeom geom{side, side, C, C, 3, 1, 1};
  auto d = nx::add(nx::depthwise_conv2d(x, g.param(*store_, m.depthwise), geom),
                   g.param(*store_, m.depthwise_bias));
  return nx::add(x, m.pointwise(g, nx::gelu(d)));
}

template <typename T>
Var<T> ImageEncoder<T>::patch_embed(Graph<T>& g, Var<T> image) const {
  auto scope = g.scope("image.patch_embed");
  const std::size_t s = dims_.image_size;
  if (image.rows() != s * s || image.cols() != 3)
    throw ShapeError("image encoder expects a " + std::to_string(s) + "x" + std::to_string(s) +
                     "x3 image, got " + nx::shape_string({image.rows(), image.cols()}));
  return embed_norm_(g, embed_(g, image, s, s));
}

template <typename T>
Var<T> ImageEncoder<T>::first_stage(Graph<T>& g, Var<T> image) const {
  auto x = patch_embed(g, image);
  auto scope = g.scope("image.stage1");
  return mix(g, 0, x);
}

template <typename T>
Var<T> ImageEncoder<T>::next_stage(Graph<T>& g, std::size_t i, Var<T> previous) const {
  if (i == 0 || i > 3) throw Error("next_stage index must be 1..3");
  auto scope = g.scope("image.stage" + std::to_string(i + 1));
  const std::size_t side = dims_.stage_side(i - 1);
  if (previous.rows() != side * side || previous.cols() != dims_.channels[i - 1])
    throw ShapeError("stage input does not match the previous stage shape");
  auto x = down_norm_[i](g, downsample_[i](g, previous, side, side));
  return mix(g, i, x);
}

template <typename T>
FeaturePyramid<T> ImageEncoder<T>::encode(Graph<T>& g, Var<T> image) const {
  FeaturePyramid<T> p;
  p.stages[0] = first_stage(g, image);
  for (std::size_t i = 1; i < 4; ++i) p.stages[i] = next_stage(g, i, p.stages[i - 1]);
  for (std::size_t i = 0; i < 4; ++i) {
    p.sides[i] = dims_.stage_side(i);
    if (p.stages[i].rows() != p.sides[i] * p.sides[i] || p.stages[i].cols() != dims_.channels[i])
      throw ShapeError("feature pyramid shape law violated at stage " + std::to_string(i + 1));
  }
  return p;
}

template <typename T>
Var<T> image_input(Graph<T>& g, const std::vector<float>& rgb, std::size_t side,
                   const std::string& name) {
  if (rgb.size() != side * side * 3)
    throw ShapeError("image buffer holds " + std::to_string(rgb.size()) + " values, expected " +
                     std::to_string(side * side * 3));
  nx::Tensor<T> t(side * side, 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) t.data[i] = static_cast<T>(rgb[i]);
  return g.input(name, std::move(t));
}

template class TextEncoder<float>;
template class TextEncoder<double>;
template class ImageEncoder<float>;
template class ImageEncoder<double>;
template Var<float> image_input(Graph<float>&, const std::vector<float>&, std::size_t, const std::string&);
template Var<double> image_input(Graph<double>&, const std::vector<float>&, std::size_t, const std::string&);

}  // namespace provg::enc

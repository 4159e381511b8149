#include "provg/nn/layers.hpp"

#include "provg/lingparse/lingparse.hpp"
#include "provg/nn/dims.hpp"

namespace provg::nn {

std::size_t ModelDims::vocab_size() const {
  return vocab ? vocab : lang::Vocabulary::instance().size();
}

void ModelDims::validate() const {
  if (patch == 0 || image_size % patch != 0) throw ConfigError("image size must be a multiple of the patch size");
  const std::size_t side = image_size / patch;
  if (side % 8 != 0) throw ConfigError("stage-1 side must be divisible by 8 for a 4-stage pyramid");
  for (std::size_t i = 1; i < 4; ++i)
    if (channels[i] != 2 * channels[i - 1]) throw ConfigError("stage channels must double per stage");
  if (text_heads == 0 || text_dim % text_heads != 0) throw ConfigError("text width must split evenly into heads");
  if (fused == 0 || max_tokens == 0 || text_layers == 0) throw ConfigError("model sizes must be positive");
}

ModelDims ModelDims::tiny() {
  ModelDims d;
  d.image_size = 32;
  d.patch = 4;
  d.text_dim = 8;
  d.text_heads = 2;
  d.text_layers = 1;
  d.text_ffn = 8;
  d.channels = {4, 8, 16, 32};
  d.fused = 4;
  return d;
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  Init init, double gain, bool bias)
    : store_(&store), in_(in), out_(out), has_bias_(bias) {
  weight_ = store.add({name + ".weight", in, out, init, gain, true});
  if (bias) bias_ = store.add({name + ".bias", 1, out, Init::kZeros, 0.0, false});
}

template <typename T>
Var<T> Linear<T>::operator()(Graph<T>& g, Var<T> x) const {
  auto y = nx::matmul(x, g.param(*store_, weight_));
  return has_bias_ ? nx::add(y, g.param(*store_, bias_)) : y;
}

template <typename T>
Conv<T>::Conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
              std::size_t kernel, std::size_t stride, std::size_t pad, Init init, double gain)
    : store_(&store), in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad) {
  weight_ = store.add({name + ".weight", kernel * kernel * in, out, init, gain, true});
  bias_ = store.add({name + ".bias", 1, out, Init::kZeros, 0.0, false});
}

template <typename T>
Var<T> Conv<T>::operator()(Graph<T>& g, Var<T> x, std::size_t height, std::size_t width) const {
  nx::ConvGeom geom{height, width, in_, out_, kernel_, stride_, pad_};
  return nx::add(nx::conv2d(x, g.param(*store_, weight_), geom), g.param(*store_, bias_));
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t width)
    : store_(&store) {
  gain_ = store.add({name + ".gain", 1, width, Init::kOnes, 0.0, false});
  shift_ = store.add({name + ".shift", 1, width, Init::kZeros, 0.0, false});
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Graph<T>& g, Var<T> x) const {
  auto y = nx::layer_norm_rows(x);
  return nx::add(nx::mul(y, g.param(*store_, gain_)), g.param(*store_, shift_));
}

template class Linear<float>;
template class Linear<double>;
template class Conv<float>;
template class Conv<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;

}  // namespace provg::nn

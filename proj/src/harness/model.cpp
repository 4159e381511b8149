#include "provg/harness/model.hpp"

namespace provg::harness {

template <typename T>
Model<T>::Model(const nn::ModelDims& dims, const ModelOptions& options, std::uint64_t seed)
    : dims_(dims), options_(options) {
  dims_.validate();
  pcm::validate(options_.modulator);
  text_ = std::make_unique<enc::TextEncoder<T>>(store_, dims_);
  image_ = std::make_unique<enc::ImageEncoder<T>>(store_, dims_);
  for (std::size_t i = 0; i < 4; ++i)
    modulators_.emplace_back(store_, "pcm.stage" + std::to_string(i + 1), dims_.channels[i], dims_.text_dim);
  fusion_ = std::make_unique<cfm::CrossScaleFusion<T>>(store_, dims_);
  decoder_ = std::make_unique<lcd::Decoder<T>>(store_, dims_);
  store_.initialize(seed);
}

template <typename T>
void Model<T>::set_options(const ModelOptions& o) {
  pcm::validate(o.modulator);
  options_ = o;
}

template <typename T>
ForwardResult<T> Model<T>::forward(Graph<T>& g, const std::vector<float>& image,
                                   const lang::LinguisticCues& cues, const std::string& tag) const {
  ForwardResult<T> r;
  r.cues = text_->encode_cues(g, cues);
  auto x = enc::image_input<T>(g, image, dims_.image_size, tag.empty() ? "image" : "image:" + tag);
  Var<T> stage;
  for (std::size_t i = 0; i < 4; ++i) {
    stage = i == 0 ? image_->first_stage(g, x) : image_->next_stage(g, i, stage);
    auto scope = g.scope("pcm.stage" + std::to_string(i + 1));
    stage = modulators_[i].modulate(g, stage, r.cues, options_.modulator, &r.traces[i]);
    r.modulated.stages[i] = stage;
    r.modulated.sides[i] = dims_.stage_side(i);
  }
  r.fused = (*fusion_)(g, r.modulated, options_.cfm);
  r.prediction = (*decoder_)(g, r.fused, r.cues.context, options_.lcm, options_.fa, &r.decoded);
  return r;
}

template class Model<float>;
template class Model<double>;

}  // namespace provg::harness

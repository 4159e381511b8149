#include "provg/lcd/lcd.hpp"

#include <string>

#include "provg/error.hpp"
#include "provg/numerics/ops.hpp"

namespace provg::lcd {

template <typename T>
Decoder<T>::Decoder(ParamStore<T>& store, const nn::ModelDims& dims) : dims_(dims) {
  const std::size_t cf = dims.fused;
  gate_ = nn::Linear<T>(store, "lcd.gate", dims.text_dim, cf);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string stage = "lcd.stage" + std::to_string(i + 1);
    merge_[i] = nn::Conv<T>(store, stage + ".merge", i == 3 ? cf : 2 * cf, cf, 1, 1, 0);
    stage_proj_[i] = nn::Linear<T>(store, stage + ".pool_proj", cf, cf);
  }
  mask_head_ = nn::Conv<T>(store, "lcd.mask_head", cf, 2, 1, 1, 0);
  stage_weight_ = nn::Linear<T>(store, "lcd.stage_weight", 4, 4);
  mlp1_ = nn::Linear<T>(store, "lcd.box.fc1", cf, cf);
  mlp2_ = nn::Linear<T>(store, "lcd.box.fc2", cf, cf);
  mlp3_ = nn::Linear<T>(store, "lcd.box.fc3", cf, 4);
}

template <typename T>
Var<T> Decoder<T>::language_gate(Graph<T>& g, Var<T> context) const {
  auto scope = g.scope("lcd.gate");
  return nx::sigmoid(nx::mean_over_rows(gate_(g, context)));
}

template <typename T>
std::pair<Var<T>, Var<T>> Decoder<T>::calibrate_stage(Graph<T>& g, std::size_t stage, Var<T> current,
                                                      Var<T> previous, std::size_t side, Var<T> gate,
                                                      bool lcm_enabled, Var<T>* fused) const {
  auto scope = g.scope("lcd.stage" + std::to_string(stage + 1));
  if (current.rows() != side * side) throw ShapeError("decoder stage has the wrong spatial size");
  Var<T> x;
  if (stage == 3) {
    if (previous.valid()) throw ShapeError("coarsest decoder stage takes no previous output");
    x = merge_[3](g, current, side, side);
  } else {
    if (!previous.valid()) throw ShapeError("decoder stage needs the next-coarser output");
    if (previous.rows() != current.rows())
      throw ShapeError("decoder inputs disagree in spatial size: " + std::to_string(current.rows()) +
                       " vs " + std::to_string(previous.rows()));
    x = merge_[stage](g, nx::concat_cols<T>({current, previous}), side, side);
  }
  if (fused) *fused = x;
  Var<T> calibrated = lcm_enabled ? nx::add(x, nx::mul(x, gate)) : x;
  return {calibrated, nx::upsample_bilinear2x(calibrated, side, side)};
}

template <typename T>
Var<T> Decoder<T>::predict_mask(Graph<T>& g, Var<T> finest, std::size_t side) const {
  auto scope = g.scope("lcd.mask");
  if (2 * side != dims_.image_size || finest.rows() != side * side)
    throw ShapeError("mask head expects the half-resolution decoded map");
  auto logits = mask_head_(g, finest, side, side);
  return nx::upsample_bilinear2x(logits, side, side);
}

template <typename T>
Var<T> Decoder<T>::predict_box(Graph<T>& g, const std::array<Var<T>, 4>& decoded, bool fa_enabled,
                               DecodedStages<T>* stages) const {
  auto scope = g.scope("lcd.box");
  std::vector<Var<T>> rows;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!decoded[i].valid()) throw Error("box head needs all four decoded stages");
    rows.push_back(stage_proj_[i](g, nx::mean_over_rows(decoded[i])));
  }
  auto features = nx::concat_rows(rows);  // (4 x C_f)
  auto descriptor = nx::transpose(nx::mean_over_cols(features));
  auto weights = nx::softmax_rows(stage_weight_(g, descriptor));
  auto aggregate = fa_enabled ? nx::matmul(weights, features) : rows[0];
  if (stages) {
    stages->stage_features = features;
    stages->stage_weights = weights;
    stages->aggregate = aggregate;
  }
  auto h = nx::relu(mlp1_(g, aggregate));
  h = nx::relu(mlp2_(g, h));
  return nx::sigmoid(mlp3_(g, h));
}

template <typename T>
PredictionPair<T> Decoder<T>::operator()(Graph<T>& g, const cfm::FusedPyramid<T>& pyramid,
                                         Var<T> context, bool lcm_enabled, bool fa_enabled,
                                         DecodedStages<T>* stages) const {
  DecodedStages<T> local;
  DecodedStages<T>& s = stages ? *stages : local;
  auto gate = language_gate(g, context);
  Var<T> previous;
  for (int i = 3; i >= 0; --i) {
    const auto side = pyramid.sides[i];
    auto [cal, dec] = calibrate_stage(g, i, pyramid.up[i], previous, side, gate, lcm_enabled,
                                      &s.fused[i]);
    s.calibrated[i] = cal;
    s.decoded[i] = dec;
    s.decoded_sides[i] = 2 * side;
    previous = dec;
  }
  PredictionPair<T> out;
  out.mask_scores = predict_mask(g, s.decoded[0], s.decoded_sides[0]);
  out.box = predict_box(g, s.decoded, fa_enabled, &s);
  return out;
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace provg::lcd

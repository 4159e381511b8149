#pragma once

#include <array>
#include <cstddef>
#include <utility>

#include "provg/cfm/cfm.hpp"
#include "provg/nn/layers.hpp"

namespace provg::lcd {

using nx::Graph;
using nx::ParamStore;
using nx::Var;

/// Decoder state, indexed by backbone stage (0 = finest).
template <typename T>
struct DecodedStages {
  std::array<Var<T>, 4> fused;       // X_i
  std::array<Var<T>, 4> calibrated;  // X~_i
  std::array<Var<T>, 4> decoded;     // V'_i, twice the stage side
  std::array<std::size_t, 4> decoded_sides{};
  Var<T> stage_features;  // F, (4 x C_f)
  Var<T> stage_weights;   // w, (1 x 4)
  Var<T> aggregate;       // F_rec, (1 x C_f)
};

/// One sample's prediction: normalized (cx, cy, w, h) box as (1 x 4) and
/// background/foreground scores as (S*S x 2).
template <typename T>
struct PredictionPair {
  Var<T> box;
  Var<T> mask_scores;
};

template <typename T>
class Decoder {
 public:
  Decoder(ParamStore<T>& store, const nn::ModelDims& dims);

  /// sigma(mean over tokens of Linear(L^c)), (1 x C_f), shared by all stages.
  Var<T> language_gate(Graph<T>& g, Var<T> context) const;

  /// One decoding step at `stage`; `previous` is the decoded output of the
  /// next-coarser stage and is invalid at the coarsest one.
  std::pair<Var<T>, Var<T>> calibrate_stage(Graph<T>& g, std::size_t stage, Var<T> current,
                                            Var<T> previous, std::size_t side, Var<T> gate,
                                            bool lcm_enabled, Var<T>* fused = nullptr) const;

  /// Runs all stages coarse to fine and both heads.
  PredictionPair<T> operator()(Graph<T>& g, const cfm::FusedPyramid<T>& pyramid, Var<T> context,
                               bool lcm_enabled, bool fa_enabled,
                               DecodedStages<T>* stages = nullptr) const;

  Var<T> predict_mask(Graph<T>& g, Var<T> finest, std::size_t side) const;
  Var<T> predict_box(Graph<T>& g, const std::array<Var<T>, 4>& decoded, bool fa_enabled,
                     DecodedStages<T>* stages = nullptr) const;

 private:
  nn::ModelDims dims_;
  nn::Linear<T> gate_;
  std::array<nn::Conv<T>, 4> merge_;
  nn::Conv<T> mask_head_;
  std::array<nn::Linear<T>, 4> stage_proj_;
  nn::Linear<T> stage_weight_;
  nn::Linear<T> mlp1_, mlp2_, mlp3_;
};

}  // namespace provg::lcd

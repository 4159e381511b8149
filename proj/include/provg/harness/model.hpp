#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "provg/cfm/cfm.hpp"
#include "provg/encoders/encoders.hpp"
#include "provg/lcd/lcd.hpp"
#include "provg/lingparse/lingparse.hpp"
#include "provg/pcm/pcm.hpp"

namespace provg::harness {

using nx::Graph;
using nx::Var;

struct ModelOptions {
  pcm::ModulatorConfig modulator;
  bool cfm = true;
  bool lcm = true;
  bool fa = true;
};

template <typename T>
struct ForwardResult {
  lcd::PredictionPair<T> prediction;
  enc::CueFeatures<T> cues;
  enc::FeaturePyramid<T> modulated;
  std::array<pcm::StageModulationTrace<T>, 4> traces;
  cfm::FusedPyramid<T> fused;
  lcd::DecodedStages<T> decoded;
};

/// The full grounding network. The parameter set does not depend on the
/// options, so every variant built from one seed starts from the same weights.
template <typename T>
class Model {
 public:
  Model(const nn::ModelDims& dims, const ModelOptions& options, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Builds the forward pass for one image (S*S*3 RGB) and its parsed cues.
  /// `tag` keeps input names unique when several samples share a graph.
  ForwardResult<T> forward(Graph<T>& g, const std::vector<float>& image,
                           const lang::LinguisticCues& cues, const std::string& tag = "") const;

  nx::ParamStore<T>& params() { return store_; }
  const nx::ParamStore<T>& params() const { return store_; }
  const nn::ModelDims& dims() const { return dims_; }
  const ModelOptions& options() const { return options_; }
  void set_options(const ModelOptions& o);

 private:
  nn::ModelDims dims_;
  ModelOptions options_;
  mutable nx::ParamStore<T> store_;
  std::unique_ptr<enc::TextEncoder<T>> text_;
  std::unique_ptr<enc::ImageEncoder<T>> image_;
  std::vector<pcm::StageModulator<T>> modulators_;
  std::unique_ptr<cfm::CrossScaleFusion<T>> fusion_;
  std::unique_ptr<lcd::Decoder<T>> decoder_;
};

}  // namespace provg::harness

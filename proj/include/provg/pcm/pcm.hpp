#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>

#include "provg/encoders/encoders.hpp"
#include "provg/nn/layers.hpp"

namespace provg::pcm {

using nx::Graph;
using nx::ParamStore;
using nx::Tensor;
using nx::Var;

/// Modulator designs: (a) context only, (b) parallel spatial+attribute,
/// (c) sequential spatial then attribute, (d) progressive survey/locate/verify.
enum class Variant { kContextOnly, kParallel, kSequential, kProgressive };
enum class Step { kSurvey, kLocate, kVerify };

struct ModulatorConfig {
  Variant variant = Variant::kProgressive;
  std::array<Step, 3> ordering{Step::kSurvey, Step::kLocate, Step::kVerify};
  bool enabled = true;
};

/// Accepts "a".."d" or "context-only", "parallel", "sequential", "progressive".
Variant parse_variant(const std::string& s);
std::string variant_name(Variant v);
/// Accepts permutations written like "S-L-V"; throws on anything else.
std::array<Step, 3> parse_ordering(const std::string& s);
std::string ordering_name(const std::array<Step, 3>& o);
void validate(const ModulatorConfig& c);

/// Gates and pre-sigmoid attention maps recorded while modulating one stage.
/// Absent entries mean that attention was not applied (identity gate).
template <typename T>
struct StageModulationTrace {
  std::optional<Tensor<T>> context_attention;    // (HW x C)
  std::optional<Tensor<T>> context_gate;         // (HW x C)
  std::optional<Tensor<T>> spatial_attention;    // (HW x 1)
  std::optional<Tensor<T>> spatial_gate;         // (HW x 1)
  std::optional<Tensor<T>> attribute_attention;  // (C x 1)
  std::optional<Tensor<T>> attribute_gate;       // (1 x C)
  Tensor<T> output;
};

/// Survey, locate and verify attention for one backbone stage of width C.
template <typename T>
class StageModulator {
 public:
  StageModulator(ParamStore<T>& store, const std::string& name, std::size_t channels,
                 std::size_t text_dim);

  /// Context-gated features Proj(V * sigmoid(A^c)).
  Var<T> survey(Graph<T>& g, Var<T> visual, Var<T> context, StageModulationTrace<T>* trace) const;
  /// Spatial gate sigmoid(A^s), (HW x 1).
  Var<T> locate_gate(Graph<T>& g, Var<T> visual, Var<T> spatial, StageModulationTrace<T>* trace) const;
  /// Proj(V * W^s).
  Var<T> locate(Graph<T>& g, Var<T> visual, Var<T> spatial, StageModulationTrace<T>* trace) const;
  /// Channel gate sigmoid((A^a)^T), (1 x C).
  Var<T> verify_gate(Graph<T>& g, Var<T> visual, Var<T> attribute, StageModulationTrace<T>* trace) const;
  /// V * W^a, no trailing projection.
  Var<T> verify(Graph<T>& g, Var<T> visual, Var<T> attribute, StageModulationTrace<T>* trace) const;

  Var<T> modulate(Graph<T>& g, Var<T> visual, const enc::CueFeatures<T>& cues,
                  const ModulatorConfig& config, StageModulationTrace<T>* trace) const;

  std::size_t channels() const { return channels_; }

 private:
  Var<T> scalar_attention(Graph<T>& g, Var<T> queries, Var<T> keys_values, std::size_t wq,
                          std::size_t wk, std::size_t wv) const;

  ParamStore<T>* store_;
  std::size_t channels_;
  // survey
  nn::Linear<T> survey_visual_, survey_text_, survey_query_, survey_key_, survey_value_, survey_proj_;
  // locate
  nn::Linear<T> locate_visual_, locate_text_, locate_proj_;
  std::size_t locate_wq_, locate_wk_, locate_wv_;
  // verify
  nn::Linear<T> verify_text_;
  std::size_t verify_wq_, verify_wk_, verify_wv_;
};

}  // namespace provg::pcm

#include "provg/pcm/pcm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "provg/error.hpp"

#include "provg/numerics/ops.hpp"

namespace provg::pcm {

using nx::Init;

Variant parse_variant(const std::string& s) {
  if (s == "a" || s == "context-only") return Variant::kContextOnly;
  if (s == "b" || s == "parallel") return Variant::kParallel;
  if (s == "c" || s == "sequential") return Variant::kSequential;
  if (s == "d" || s == "progressive") return Variant::kProgressive;
  throw ConfigError("unknown modulator variant: " + s);
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kContextOnly: return "context-only";
    case Variant::kParallel: return "parallel";
    case Variant::kSequential: return "sequential";
    case Variant::kProgressive: return "progressive";
  }
  return "?";
}

std::array<Step, 3> parse_ordering(const std::string& s) {
  std::string letters;
  for (char c : s)
    if (c != '-' && c != ' ') letters += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (letters.size() != 3) throw ConfigError("ordering must name three steps: " + s);
  std::array<Step, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    switch (letters[i]) {
      case 'S': out[i] = Step::kSurvey; break;
      case 'L': out[i] = Step::kLocate; break;
      case 'V': out[i] = Step::kVerify; break;
      default: throw ConfigError("ordering step must be S, L or V: " + s);
    }
  }
  auto sorted = letters;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != "LSV") throw ConfigError("ordering must be a permutation of S, L, V: " + s);
  return out;
}

std::string ordering_name(const std::array<Step, 3>& o) {
  std::string s;
  for (std::size_t i = 0; i < 3; ++i) {
    if (i) s += '-';
    s += o[i] == Step::kSurvey ? 'S' : o[i] == Step::kLocate ? 'L' : 'V';
  }
  return s;
}

void validate(const ModulatorConfig& c) {
  auto o = c.ordering;
  std::sort(o.begin(), o.end());
  if (o != std::array<Step, 3>{Step::kSurvey, Step::kLocate, Step::kVerify})
    throw ConfigError("modulator ordering must be a permutation of S, L, V");
}

template <typename T>
StageModulator<T>::StageModulator(ParamStore<T>& store, const std::string& name,
                                  std::size_t channels, std::size_t text_dim)
    : store_(&store), channels_(channels) {
  const std::size_t C = channels, D = text_dim;
  survey_visual_ = nn::Linear<T>(store, name + ".survey.visual", C, C);
  survey_text_ = nn::Linear<T>(store, name + ".survey.text", D, C);
  survey_query_ = nn::Linear<T>(store, name + ".survey.query", C, C, Init::kXavier, 1.0, false);
  survey_key_ = nn::Linear<T>(store, name + ".survey.key", C, C, Init::kXavier, 1.0, false);
  survey_value_ = nn::Linear<T>(store, name + ".survey.value", C, C, Init::kXavier, 1.0, false);
  survey_proj_ = nn::Linear<T>(store, name + ".survey.proj", C, C);

  locate_visual_ = nn::Linear<T>(store, name + ".locate.visual", C, 1);
  locate_text_ = nn::Linear<T>(store, name + ".locate.text", D, 1);
  locate_proj_ = nn::Linear<T>(store, name + ".locate.proj", C, C);
  locate_wq_ = store.add({name + ".locate.query", 1, 1, Init::kNormal, 1.0, false});
  locate_wk_ = store.add({name + ".locate.key", 1, 1, Init::kNormal, 1.0, false});
  locate_wv_ = store.add({name + ".locate.value", 1, 1, Init::kNormal, 1.0, false});

  verify_text_ = nn::Linear<T>(store, name + ".verify.text", D, 1);
  verify_wq_ = store.add({name + ".verify.query", 1, 1, Init::kNormal, 1.0, false});
  verify_wk_ = store.add({name + ".verify.key", 1, 1, Init::kNormal, 1.0, false});
  verify_wv_ = store.add({name + ".verify.value", 1, 1, Init::kNormal, 1.0, false});
}

// Single-head attention between width-1 token sets: queries (Q x 1) against
// keys/values (N x 1) with scalar projections and unit scaling.
template <typename T>
Var<T> StageModulator<T>::scalar_attention(Graph<T>& g, Var<T> queries, Var<T> keys_values,
                                           std::size_t wq, std::size_t wk, std::size_t wv) const {
  auto q = nx::mul(queries, g.param(*store_, wq));
  auto k = nx::mul(keys_values, g.param(*store_, wk));
  auto v = nx::mul(keys_values, g.param(*store_, wv));
  return nx::matmul(nx::softmax_rows(nx::matmul_nt(q, k)), v);
}

template <typename T>
Var<T> StageModulator<T>::survey(Graph<T>& g, Var<T> visual, Var<T> context,
                                 StageModulationTrace<T>* trace) const {
  auto scope = g.scope("survey");
  if (visual.cols() != channels_) throw ShapeError("survey: visual width does not match stage channels");
  auto v = survey_visual_(g, visual);
  auto l = survey_text_(g, context);
  auto q = survey_query_(g, v), k = survey_key_(g, l), val = survey_value_(g, l);
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels_));
  auto att = nx::matmul(nx::softmax_rows(nx::affine(nx::matmul_nt(q, k), scale)), val);
  auto gate = nx::sigmoid(att);
  if (trace) {
    trace->context_attention = att.value();
    trace->context_gate = gate.value();
  }
  return survey_proj_(g, nx::mul(visual, gate));
}

template <typename T>
Var<T> StageModulator<T>::locate_gate(Graph<T>& g, Var<T> visual, Var<T> spatial,
                                      StageModulationTrace<T>* trace) const {
  auto scope = g.scope("locate");
  if (visual.cols() != channels_) throw ShapeError("locate: visual width does not match stage channels");
  auto saliency = locate_visual_(g, visual);  // (HW x 1)
  auto tokens = locate_text_(g, spatial);     // (N_s x 1)
  auto att = scalar_attention(g, saliency, tokens, locate_wq_, locate_wk_, locate_wv_);
  auto gate = nx::sigmoid(att);
  if (trace) {
    trace->spatial_attention = att.value();
    trace->spatial_gate = gate.value();
  }
  return gate;
}

template <typename T>
Var<T> StageModulator<T>::locate(Graph<T>& g, Var<T> visual, Var<T> spatial,
                                 StageModulationTrace<T>* trace) const {
  auto gate = locate_gate(g, visual, spatial, trace);
  auto scope = g.scope("locate");
  return locate_proj_(g, nx::mul(visual, gate));
}

template <typename T>
Var<T> StageModulator<T>::verify_gate(Graph<T>& g, Var<T> visual, Var<T> attribute,
                                      StageModulationTrace<T>* trace) const {
  auto scope = g.scope("verify");
  if (visual.cols() != channels_) throw ShapeError("verify: visual width does not match stage channels");
  auto channel_queries = nx::transpose(nx::mean_over_rows(visual));  // (C x 1)
  auto tokens = verify_text_(g, attribute);                           // (N_a x 1)
  auto att = scalar_attention(g, channel_queries, tokens, verify_wq_, verify_wk_, verify_wv_);
  auto gate = nx::sigmoid(nx::transpose(att));  // (1 x C)
  if (trace) {
    trace->attribute_attention = att.value();
    trace->attribute_gate = gate.value();
  }
  return gate;
}

template <typename T>
Var<T> StageModulator<T>::verify(Graph<T>& g, Var<T> visual, Var<T> attribute,
                                 StageModulationTrace<T>* trace) const {
  return nx::mul(visual, verify_gate(g, visual, attribute, trace));
}

template <typename T>
Var<T> StageModulator<T>::modulate(Graph<T>& g, Var<T> visual, const enc::CueFeatures<T>& cues,
                                   const ModulatorConfig& config,
                                   StageModulationTrace<T>* trace) const {
  validate(config);
  Var<T> out = visual;
  if (config.enabled) {
    switch (config.variant) {
      case Variant::kContextOnly:
        out = survey(g, visual, cues.context, trace);
        break;
      case Variant::kParallel: {
        auto ws = locate_gate(g, visual, cues.spatial, trace);
        auto wa = verify_gate(g, visual, cues.attribute, trace);
        auto scope = g.scope("parallel");
        out = locate_proj_(g, nx::mul(nx::mul(visual, ws), wa));
        break;
      }
      case Variant::kSequential:
        out = verify(g, locate(g, visual, cues.spatial, trace), cues.attribute, trace);
        break;
      case Variant::kProgressive:
        for (Step s : config.ordering) {
          switch (s) {
            case Step::kSurvey: out = survey(g, out, cues.context, trace); break;
            case Step::kLocate: out = locate(g, out, cues.spatial, trace); break;
            case Step::kVerify: out = verify(g, out, cues.attribute, trace); break;
          }
        }
        break;
    }
  }
  if (out.rows() != visual.rows() || out.cols() != visual.cols())
    throw ShapeError("modulation changed the stage shape");
  if (trace) trace->output = out.value();
  return out;
}

template class StageModulator<float>;
template class StageModulator<double>;

}  // namespace provg::pcm

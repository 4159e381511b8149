#pragma once

#include <array>
#include <optional>

#include "provg/geometry/geometry.hpp"
#include "provg/numerics/graph.hpp"

namespace provg::loss {

using nx::Graph;
using nx::Var;

struct Lambdas {
  double box = 1.0;
  double mask = 0.5;
  double cons = 0.1;
};
void validate(const Lambdas& l);

template <typename T>
struct BoxLossTerms {
  Var<T> smooth_l1;  // already weighted by 10
  Var<T> giou;       // 1 - GIoU
  Var<T> total;
};

template <typename T>
struct MaskLossTerms {
  Var<T> cross_entropy;
  Var<T> dice;
  Var<T> total;
};

template <typename T>
struct ConsLossTerms {
  std::optional<BoxLossTerms<T>> box;  // empty when the binarized mask is empty
  std::optional<geo::Box> target;      // b_m, normalized
  bool skipped() const { return !box.has_value(); }
};

/// Differentiable GIoU of two (1 x 4) normalized (cx, cy, w, h) boxes.
template <typename T>
Var<T> giou(Var<T> a, Var<T> b);

/// 10 * smoothL1 (beta = 1, summed over coordinates) + (1 - GIoU).
/// Throws on non-finite targets or non-positive target width/height.
template <typename T>
BoxLossTerms<T> box_loss(Graph<T>& g, Var<T> predicted, const geo::Box& target);

/// Mean pixel cross-entropy plus Dice (eps = 1) over (HW x 2) scores.
template <typename T>
MaskLossTerms<T> mask_loss(Graph<T>& g, Var<T> scores, const geo::Mask& target);

/// Foreground-probability > 0.5 mask of (HW x 2) scores on a square canvas.
template <typename T>
geo::Mask binarize_scores(const nx::Tensor<T>& scores);

/// Box loss against the enclosing rectangle of the predicted mask, held constant.
template <typename T>
ConsLossTerms<T> cons_loss(Graph<T>& g, Var<T> predicted_box, Var<T> scores);

/// Plain-number record of one sample's (or a batch mean's) objective.
struct LossReport {
  double box_smooth_l1 = 0, box_giou = 0, box = 0;
  double mask_ce = 0, mask_dice = 0, mask = 0;
  double cons = 0;
  int cons_skipped = 0;
  Lambdas lambdas;
  double total = 0;
};

/// Fills report.total from the components; throws on negative weights.
LossReport total_loss(LossReport components, const Lambdas& lambdas);

template <typename T>
struct SampleLoss {
  Var<T> total;
  LossReport report;
};

/// Full per-sample objective on the graph.
template <typename T>
SampleLoss<T> sample_loss(Graph<T>& g, Var<T> predicted_box, Var<T> scores, const geo::Box& gt_box,
                          const geo::Mask& gt_mask, const Lambdas& lambdas);

}  // namespace provg::loss

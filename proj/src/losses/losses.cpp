#include "provg/losses/losses.hpp"

#include <cmath>
#include <string>

#include "provg/error.hpp"
#include "provg/numerics/ops.hpp"

namespace provg::loss {

void validate(const Lambdas& l) {
  for (double v : {l.box, l.mask, l.cons})
    if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and non-negative");
}

namespace {

template <typename T>
struct Corners {
  Var<T> x1, y1, x2, y2;
};

template <typename T>
Corners<T> corners(Var<T> b) {
  auto cx = nx::slice_cols(b, 0, 1), cy = nx::slice_cols(b, 1, 1);
  auto hw = nx::affine(nx::slice_cols(b, 2, 1), 0.5), hh = nx::affine(nx::slice_cols(b, 3, 1), 0.5);
  return {nx::sub(cx, hw), nx::sub(cy, hh), nx::add(cx, hw), nx::add(cy, hh)};
}

template <typename T>
Var<T> box_constant(Graph<T>& g, const geo::Box& b) {
  auto c = b.cxcywh();
  return g.constant(nx::Tensor<T>({1, 4}, {T(c[0]), T(c[1]), T(c[2]), T(c[3])}));
}

}  // namespace

template <typename T>
Var<T> giou(Var<T> a, Var<T> b) {
  auto p = corners(a), q = corners(b);
  auto iw = nx::relu(nx::sub(nx::minimum(p.x2, q.x2), nx::maximum(p.x1, q.x1)));
  auto ih = nx::relu(nx::sub(nx::minimum(p.y2, q.y2), nx::maximum(p.y1, q.y1)));
  auto inter = nx::mul(iw, ih);
  auto area_a = nx::mul(nx::sub(p.x2, p.x1), nx::sub(p.y2, p.y1));
  auto area_b = nx::mul(nx::sub(q.x2, q.x1), nx::sub(q.y2, q.y1));
  auto uni = nx::sub(nx::add(area_a, area_b), inter);
  auto hull = nx::mul(nx::sub(nx::maximum(p.x2, q.x2), nx::minimum(p.x1, q.x1)),
                      nx::sub(nx::maximum(p.y2, q.y2), nx::minimum(p.y1, q.y1)));
  return nx::sub(nx::div(inter, uni), nx::div(nx::sub(hull, uni), hull));
}

template <typename T>
BoxLossTerms<T> box_loss(Graph<T>& g, Var<T> predicted, const geo::Box& target) {
  if (predicted.rows() != 1 || predicted.cols() != 4) throw ShapeError("box loss expects a (1 x 4) box");
  for (double v : {target.x1, target.y1, target.x2, target.y2})
    if (!std::isfinite(v)) throw Error("box loss: non-finite target");
  if (target.unit != geo::Unit::kNormalized) throw Error("box loss: target must be normalized");
  if (target.width() <= 0 || target.height() <= 0)
    throw Error("box loss: target width and height must be positive");
  auto scope = g.scope("loss.box");
  auto t = box_constant(g, target);
  BoxLossTerms<T> out;
  out.smooth_l1 = nx::affine(nx::sum_all(nx::smooth_l1(nx::sub(predicted, t), 1.0)), 10.0);
  out.giou = nx::affine(giou(predicted, t), -1.0, 1.0);
  out.total = nx::add(out.smooth_l1, out.giou);
  return out;
}

template <typename T>
MaskLossTerms<T> mask_loss(Graph<T>& g, Var<T> scores, const geo::Mask& target) {
  const std::size_t n = target.height * target.width;
  if (scores.cols() != 2 || scores.rows() != n)
    throw ShapeError("mask loss: scores " + nx::shape_string(scores.value().shape) + " do not match a " +
                     std::to_string(target.height) + "x" + std::to_string(target.width) + " mask");
  auto scope = g.scope("loss.mask");
  nx::Tensor<T> onehot(n, 2), fg(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const bool f = target.data[i] != 0;
    onehot.data[2 * i + (f ? 1 : 0)] = T(1);
    fg.data[i] = f ? T(1) : T(0);
  }
  auto oh = g.constant(std::move(onehot));
  auto gt = g.constant(std::move(fg));
  MaskLossTerms<T> out;
  out.cross_entropy = nx::affine(nx::sum_all(nx::mul(nx::log_softmax_rows(scores), oh)),
                                 -1.0 / static_cast<double>(n));
  auto p = nx::slice_cols(nx::softmax_rows(scores), 1, 1);
  auto inter = nx::sum_all(nx::mul(p, gt));
  auto denom = nx::affine(nx::sum_all(p), 1.0, static_cast<double>(target.count()) + 1.0);
  out.dice = nx::affine(nx::div(nx::affine(inter, 2.0, 1.0), denom), -1.0, 1.0);
  out.total = nx::add(out.cross_entropy, out.dice);
  return out;
}

template <typename T>
geo::Mask binarize_scores(const nx::Tensor<T>& scores) {
  const std::size_t n = scores.rows();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n || scores.cols() != 2) throw ShapeError("scores must be (S*S x 2)");
  geo::Mask m(side, side);
  // softmax foreground > 0.5 exactly when the foreground score is larger
  for (std::size_t i = 0; i < n; ++i) m.data[i] = scores.data[2 * i + 1] > scores.data[2 * i] ? 1 : 0;
  return m;
}

template <typename T>
ConsLossTerms<T> cons_loss(Graph<T>& g, Var<T> predicted_box, Var<T> scores) {
  ConsLossTerms<T> out;
  const auto mask = binarize_scores(scores.value());
  auto rect = geo::mask_to_box(mask);
  if (!rect) return out;
  out.target = rect->to_normalized(static_cast<double>(mask.width));
  auto scope = g.scope("loss.cons");
  out.box = box_loss(g, predicted_box, *out.target);
  return out;
}

LossReport total_loss(LossReport r, const Lambdas& lambdas) {
  validate(lambdas);
  r.lambdas = lambdas;
  r.total = lambdas.box * r.box + lambdas.mask * r.mask + lambdas.cons * r.cons;
  return r;
}

template <typename T>
SampleLoss<T> sample_loss(Graph<T>& g, Var<T> predicted_box, Var<T> scores, const geo::Box& gt_box,
                          const geo::Mask& gt_mask, const Lambdas& lambdas) {
  validate(lambdas);
  auto box = box_loss(g, predicted_box, gt_box);
  auto mask = mask_loss(g, scores, gt_mask);
  auto cons = cons_loss(g, predicted_box, scores);

  auto scalar = [](Var<T> v) { return static_cast<double>(v.value().data[0]); };
  LossReport r;
  r.box_smooth_l1 = scalar(box.smooth_l1);
  r.box_giou = scalar(box.giou);
  r.box = scalar(box.total);
  r.mask_ce = scalar(mask.cross_entropy);
  r.mask_dice = scalar(mask.dice);
  r.mask = scalar(mask.total);
  r.cons = cons.skipped() ? 0.0 : scalar(cons.box->total);
  r.cons_skipped = cons.skipped() ? 1 : 0;
  r = total_loss(r, lambdas);

  auto total = nx::add(nx::affine(box.total, lambdas.box), nx::affine(mask.total, lambdas.mask));
  if (!cons.skipped() && lambdas.cons != 0.0)
    total = nx::add(total, nx::affine(cons.box->total, lambdas.cons));
  return {total, r};
}

#define PROVG_INSTANTIATE(T)                                                                        \
  template Var<T> giou<T>(Var<T>, Var<T>);                                                          \
  template BoxLossTerms<T> box_loss<T>(Graph<T>&, Var<T>, const geo::Box&);                         \
  template MaskLossTerms<T> mask_loss<T>(Graph<T>&, Var<T>, const geo::Mask&);                      \
  template geo::Mask binarize_scores<T>(const nx::Tensor<T>&);                                      \
  template ConsLossTerms<T> cons_loss<T>(Graph<T>&, Var<T>, Var<T>);                                \
  template SampleLoss<T> sample_loss<T>(Graph<T>&, Var<T>, Var<T>, const geo::Box&, const geo::Mask&, \
                                        const Lambdas&);
PROVG_INSTANTIATE(float)
PROVG_INSTANTIATE(double)
#undef PROVG_INSTANTIATE

}  // namespace provg::loss

#include <doctest.h>

#include <cmath>
#include <random>

#include "provg/error.hpp"
#include "provg/geometry/geometry.hpp"
#include "provg/losses/losses.hpp"
#include "provg/numerics/grad_check.hpp"
#include "provg/numerics/ops.hpp"
#include "support.hpp"

using namespace provg;
using geo::Box;
using geo::Unit;
using nx::Graph;
using nx::Tensor;
using nx::Var;

namespace {

Var<double> box_input(Graph<double>& g, std::array<double, 4> b, const std::string& name = "box") {
  return g.input(name, Tensor<double>({1, 4}, {b[0], b[1], b[2], b[3]}), true);
}

Box norm_box(double x1, double y1, double x2, double y2) { return Box{x1, y1, x2, y2, Unit::kNormalized}; }

// Hard scores: +/- 40 logits put the softmax within 1e-34 of 0/1.
Tensor<double> hard_scores(const geo::Mask& fg) {
  Tensor<double> s(fg.data.size(), 2);
  for (std::size_t i = 0; i < fg.data.size(); ++i) {
    s.at(i, 0) = fg.data[i] ? -20.0 : 20.0;
    s.at(i, 1) = -s.at(i, 0);
  }
  return s;
}

double smooth_l1_ref(double x) { return std::abs(x) < 1 ? 0.5 * x * x : std::abs(x) - 0.5; }

std::array<double, 4> random_valid_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(0.1, 0.9), s(0.05, 0.6);
  return {c(rng), c(rng), s(rng), s(rng)};
}

}  // namespace

TEST_CASE("box loss examples") {
  Graph<double> g;
  auto same = loss::box_loss(g, box_input(g, {0.5, 0.5, 0.2, 0.4}), Box::from_cxcywh(0.5, 0.5, 0.2, 0.4, Unit::kNormalized));
  CHECK(same.total.value().data[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));

  // residual 0.5 on each coordinate
  auto shifted = loss::box_loss(g, box_input(g, {0.5, 0.5, 0.5, 0.5}, "shifted"), Box::from_cxcywh(0.0, 0.0, 1.0, 1.0, Unit::kNormalized));
  CHECK(shifted.smooth_l1.value().data[0] == doctest::Approx(10 * 4 * 0.125).epsilon(1e-14));

  // corners (0,0,1,1) vs (2,2,3,3): union 2, hull 9
  Graph<double> h;
  auto disjoint = loss::box_loss(h, box_input(h, {0.5, 0.5, 1, 1}), norm_box(2, 2, 3, 3));
  CHECK(disjoint.giou.value().data[0] == doctest::Approx(16.0 / 9.0).epsilon(1e-14));
}

TEST_CASE("box loss input errors") {
  Graph<double> g;
  auto b = box_input(g, {0.5, 0.5, 0.2, 0.2});
  CHECK_THROWS_AS(loss::box_loss(g, b, norm_box(0.2, 0.2, 0.2, 0.6)), Error);
  CHECK_THROWS_AS(loss::box_loss(g, b, norm_box(0.2, 0.2, 0.6, 0.1)), Error);
  CHECK_THROWS_AS(loss::box_loss(g, b, norm_box(0.2, NAN, 0.6, 0.6)), Error);
  CHECK_THROWS_AS(loss::box_loss(g, b, Box{1, 1, 5, 5, Unit::kPixel}), Error);
  CHECK_THROWS_AS(loss::box_loss(g, g.input("bad", Tensor<double>(1, 3)), norm_box(0, 0, 1, 1)), ShapeError);
}

TEST_CASE("box loss properties on random pairs") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    auto a = random_valid_box(rng), b = random_valid_box(rng);
    Graph<double> g;
    auto va = box_input(g, a, "a"), vb = box_input(g, b, "b");
    auto target = Box::from_cxcywh(b[0], b[1], b[2], b[3], Unit::kNormalized);
    auto l = loss::box_loss(g, va, target);
    CHECK(l.total.value().data[0] >= 0.0);
    CHECK(loss::box_loss(g, vb, target).total.value().data[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
    const double gab = loss::giou(va, vb).value().data[0], gba = loss::giou(vb, va).value().data[0];
    CHECK(gab == doctest::Approx(gba).epsilon(1e-14));
    // agrees with the geometry module
    auto ref = geo::box_iou_giou(Box::from_cxcywh(a[0], a[1], a[2], a[3], Unit::kNormalized), target);
    CHECK(gab == doctest::Approx(ref.giou).epsilon(1e-12));
    double sl1 = 0;
    for (int k = 0; k < 4; ++k) sl1 += smooth_l1_ref(a[k] - b[k]);
    CHECK(l.smooth_l1.value().data[0] == doctest::Approx(10 * sl1).epsilon(1e-12));
  }
}

TEST_CASE("mask loss examples") {
  geo::Mask gt(2, 4);
  gt.data = {1, 1, 1, 1, 0, 0, 0, 0};
  {
    Graph<double> g;
    auto l = loss::mask_loss(g, g.input("s", hard_scores(gt)), gt);
    CHECK(l.dice.value().data[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(l.cross_entropy.value().data[0] < 1e-12);
  }
  {
    geo::Mask pred(2, 4);
    pred.data = {1, 1, 0, 0, 1, 1, 0, 0};  // |P & G| = 2, |P| = |G| = 4
    Graph<double> g;
    auto l = loss::mask_loss(g, g.input("s", hard_scores(pred)), gt);
    const double inter = 2, p = 4, q = 4;
    CHECK(1 - 2 * inter / (p + q) == 0.5);
    CHECK(l.dice.value().data[0] == doctest::Approx(1 - (2 * inter + 1) / (p + q + 1)).epsilon(1e-12));
  }
  {
    Graph<double> g;
    auto l = loss::mask_loss(g, g.input("s", Tensor<double>(8, 2, 0.3)), gt);
    CHECK(l.cross_entropy.value().data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  Graph<double> g;
  CHECK_THROWS_AS(loss::mask_loss(g, g.input("s", Tensor<double>(9, 2)), gt), ShapeError);
  CHECK_THROWS_AS(loss::mask_loss(g, g.input("t", Tensor<double>(8, 3)), gt), ShapeError);
}

TEST_CASE("mask loss ranges on random inputs") {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.3);
  for (int i = 0; i < 50; ++i) {
    geo::Mask gt(8, 8);
    for (auto& v : gt.data) v = coin(rng) ? 1 : 0;
    Graph<double> g;
    auto l = loss::mask_loss(g, g.input("s", test::random_tensor(64, 2, rng, -4, 4)), gt);
    CHECK(l.cross_entropy.value().data[0] >= 0.0);
    CHECK(l.dice.value().data[0] >= 0.0);
    CHECK(l.dice.value().data[0] <= 1.0);
  }
}

TEST_CASE("binarization follows the larger score") {
  Tensor<double> s({4, 2}, {0.0, 1.0, 1.0, 0.0, 0.5, 0.5, -2.0, -1.0});
  auto m = loss::binarize_scores(s);
  CHECK(m.height == 2);
  CHECK(m.data == std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK_THROWS_AS(loss::binarize_scores(Tensor<double>(5, 2)), ShapeError);
}

TEST_CASE("consistency loss examples") {
  geo::Mask empty(64, 64);
  {
    Graph<double> g;
    auto c = loss::cons_loss(g, box_input(g, {0.5, 0.5, 0.5, 0.5}), g.input("s", hard_scores(empty)));
    CHECK(c.skipped());
  }
  for (std::size_t side : {64, 62}) {
    CAPTURE(side);
    // pixels whose centres fall inside (0.25, 0.75) of the canvas
    geo::Mask m(side, side);
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t col = 0; col < side; ++col) {
        const double y = (r + 0.5) / side, x = (col + 0.5) / side;
        m.at(r, col) = (x >= 0.25 && x <= 0.75 && y >= 0.25 && y <= 0.75) ? 1 : 0;
      }
    // brute-force enclosing rectangle
    double x1 = 1e9, y1 = 1e9, x2 = -1, y2 = -1;
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t col = 0; col < side; ++col)
        if (m.at(r, col)) {
          x1 = std::min(x1, double(col)), x2 = std::max(x2, double(col + 1));
          y1 = std::min(y1, double(r)), y2 = std::max(y2, double(r + 1));
        }
    const double s = static_cast<double>(side);
    Graph<double> g;
    auto c = loss::cons_loss(g, box_input(g, {0.5, 0.5, 0.5, 0.5}), g.input("s", hard_scores(m)));
    REQUIRE_FALSE(c.skipped());
    CHECK(c.target->x1 == doctest::Approx(x1 / s).epsilon(1e-15));
    CHECK(c.target->y2 == doctest::Approx(y2 / s).epsilon(1e-15));
    auto bm = c.target->cxcywh();
    const std::array<double, 4> bp{0.5, 0.5, 0.5, 0.5};
    double residual = 0;
    for (int k = 0; k < 4; ++k) {
      CHECK(std::abs(bm[k] - bp[k]) <= 1.0 / s);
      residual += smooth_l1_ref(bm[k] - bp[k]);
    }
    const double total = c.box->total.value().data[0];
    if (side == 64) {
      CHECK(total == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
      CHECK(total <= 10 * residual + 1e-14);
    } else {
      const double giou = geo::box_iou_giou(norm_box(0.25, 0.25, 0.75, 0.75), *c.target).giou;
      CHECK(total == doctest::Approx(10 * residual + 1 - giou).epsilon(1e-12));
    }
  }
}

TEST_CASE("consistency loss does not differentiate through the mask") {
  geo::Mask m(8, 8);
  for (std::size_t r = 2; r < 6; ++r)
    for (std::size_t c = 1; c < 5; ++c) m.at(r, c) = 1;
  Graph<double> g;
  auto scores = g.input("s", hard_scores(m), true);
  auto c = loss::cons_loss(g, box_input(g, {0.4, 0.5, 0.3, 0.6}), scores);
  REQUIRE_FALSE(c.skipped());
  g.backward(c.box->total);
  for (double v : g.grad(scores).data) CHECK(v == 0.0);
}

TEST_CASE("total loss weighting") {
  loss::LossReport r;
  r.box = 2, r.mask = 4, r.cons = 10;
  CHECK(loss::total_loss(r, {}).total == doctest::Approx(5.0).epsilon(1e-15));
  auto a = loss::total_loss(r, {1, 0.5, 0});
  r.cons = 1000;
  CHECK(loss::total_loss(r, {1, 0.5, 0}).total == a.total);
  CHECK(loss::total_loss(loss::LossReport{}, {}).total == 0.0);
  CHECK_THROWS_AS(loss::total_loss(r, {1, -0.5, 0.1}), ConfigError);
  CHECK_THROWS_AS(loss::total_loss(r, {1, 0.5, NAN}), ConfigError);
}

TEST_CASE("per-sample objective matches its report and its gradient") {
  std::mt19937_64 rng(3);
  geo::Mask gt(8, 8);
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t c = 2; c < 7; ++c) gt.at(r, c) = 1;
  const auto gt_box = geo::mask_to_box(gt)->to_normalized(8);
  for (double lc : {0.1, 0.0}) {
    CAPTURE(lc);
    Graph<double> g;
    auto box = box_input(g, {0.45, 0.4, 0.5, 0.35});
    auto scores = g.input("s", test::random_tensor(64, 2, rng, -2, 2), true);
    loss::Lambdas lambdas{1, 0.5, lc};
    auto s = loss::sample_loss(g, box, scores, gt_box, gt, lambdas);
    const auto& r = s.report;
    CHECK(r.total == doctest::Approx(r.box + 0.5 * r.mask + lc * r.cons).epsilon(1e-12));
    CHECK(s.total.value().data[0] == doctest::Approx(r.total).epsilon(1e-12));
    CHECK(r.cons_skipped == 0);
    CHECK(r.box == doctest::Approx(r.box_smooth_l1 + r.box_giou).epsilon(1e-12));
    CHECK(r.mask == doctest::Approx(r.mask_ce + r.mask_dice).epsilon(1e-12));
    auto check = nx::grad_check(g, s.total, {box, scores});
    CHECK(check.max_relative_error <= 1e-4);
  }
}

#include <doctest.h>

#include <cmath>
#include <random>

#include "provg/error.hpp"
#include "provg/numerics/grad_check.hpp"
#include "provg/pcm/pcm.hpp"
#include "support.hpp"

using namespace provg;
using nx::Graph;
using nx::Tensor;
using nx::Var;
using test::random_tensor;

namespace {

struct Fixture {
  std::size_t channels, text_dim;
  nx::ParamStore<double> store;
  pcm::StageModulator<double> mod;
  Fixture(std::size_t c, std::size_t d, std::uint64_t seed = 1)
      : channels(c), text_dim(d), mod(store, "pcm", c, d) {
    store.initialize(seed);
  }
  Tensor<double>& param(const std::string& name) { return store.value(store.index(name)); }
};

enc::CueFeatures<double> cues(Graph<double>& g, std::size_t nc, std::size_t ns, std::size_t na, std::size_t d,
                              std::mt19937_64& rng) {
  return {g.input("context", random_tensor(nc, d, rng), true), g.input("spatial", random_tensor(ns, d, rng), true),
          g.input("attribute", random_tensor(na, d, rng), true)};
}

// x W + b for a (1 x d) row, computed without the graph.
std::vector<double> affine_row(const std::vector<double>& x, const Tensor<double>& w, const Tensor<double>* b) {
  std::vector<double> y(w.cols(), 0.0);
  for (std::size_t j = 0; j < w.cols(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w.at(i, j);
    if (b) y[j] += b->data[j];
  }
  return y;
}

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }

}  // namespace

TEST_CASE("variant and ordering parsing") {
  CHECK(pcm::parse_variant("d") == pcm::Variant::kProgressive);
  CHECK(pcm::parse_variant("parallel") == pcm::Variant::kParallel);
  CHECK_THROWS_AS(pcm::parse_variant("e"), ConfigError);
  CHECK(pcm::ordering_name(pcm::parse_ordering("v-l-s")) == "V-L-S");
  CHECK_THROWS_AS(pcm::parse_ordering("S-S-V"), ConfigError);
  CHECK_THROWS_AS(pcm::parse_ordering("S-L"), ConfigError);
  CHECK_THROWS_AS(pcm::parse_ordering("S-L-X"), ConfigError);
}

TEST_CASE("survey with a single context token") {
  Fixture f(8, 6);
  std::mt19937_64 rng(2);
  Graph<double> g;
  auto v = g.input("v", random_tensor(16, 8, rng));
  auto l = random_tensor(1, 6, rng);
  pcm::StageModulationTrace<double> tr;
  f.mod.survey(g, v, g.input("l", l), &tr);
  auto value = affine_row(affine_row(l.data, f.param("pcm.survey.text.weight"), &f.param("pcm.survey.text.bias")),
                          f.param("pcm.survey.value.weight"), nullptr);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(tr.context_attention->at(r, c) == doctest::Approx(value[c]).epsilon(1e-12));
}

TEST_CASE("survey with zero attention halves the features before projection") {
  Fixture f(8, 6);
  for (auto& x : f.param("pcm.survey.value.weight").data) x = 0;
  std::mt19937_64 rng(3);
  Graph<double> g;
  auto vt = random_tensor(16, 8, rng);
  pcm::StageModulationTrace<double> tr;
  auto out = f.mod.survey(g, g.input("v", vt), g.input("l", random_tensor(3, 6, rng)), &tr);
  for (double x : tr.context_gate->data) CHECK(x == 0.5);
  const auto& wp = f.param("pcm.survey.proj.weight");
  const auto& bp = f.param("pcm.survey.proj.bias");
  for (std::size_t r = 0; r < 16; ++r) {
    std::vector<double> half(8);
    for (std::size_t c = 0; c < 8; ++c) half[c] = vt.at(r, c) / 2;
    auto expect = affine_row(half, wp, &bp);
    for (std::size_t c = 0; c < 8; ++c) CHECK(out.value().at(r, c) == doctest::Approx(expect[c]).epsilon(1e-12));
  }
}

TEST_CASE("attention shapes per stage") {
  std::mt19937_64 rng(4);
  {
    Fixture f(64, 64);
    Graph<double> g;
    auto out = f.mod.survey(g, g.input("v", random_tensor(64, 64, rng)), g.input("l", random_tensor(7, 64, rng)), nullptr);
    CHECK(out.value().shape == std::vector<std::size_t>{64, 64});
  }
  {
    Fixture f(128, 64);
    Graph<double> g;
    pcm::StageModulationTrace<double> tr;
    auto out = f.mod.locate(g, g.input("v", random_tensor(16, 128, rng)), g.input("l", random_tensor(4, 64, rng)), &tr);
    CHECK(tr.spatial_gate->shape == std::vector<std::size_t>{16, 1});
    CHECK(out.value().shape == std::vector<std::size_t>{16, 128});
  }
  {
    Fixture f(256, 64);
    Graph<double> g;
    pcm::StageModulationTrace<double> tr;
    auto out = f.mod.verify(g, g.input("v", random_tensor(4, 256, rng)), g.input("l", random_tensor(2, 64, rng)), &tr);
    CHECK(tr.attribute_attention->shape == std::vector<std::size_t>{256, 1});
    CHECK(tr.attribute_gate->shape == std::vector<std::size_t>{1, 256});
    CHECK(out.value().shape == std::vector<std::size_t>{4, 256});
  }
  Fixture f(8, 6);
  Graph<double> g;
  CHECK_THROWS_AS(f.mod.survey(g, g.input("v", random_tensor(4, 7, rng)), g.input("l", random_tensor(2, 6, rng)), nullptr),
                  ShapeError);
}

TEST_CASE("locate with a single spatial token gives a uniform gate") {
  Fixture f(8, 6);
  std::mt19937_64 rng(5);
  Graph<double> g;
  pcm::StageModulationTrace<double> tr;
  f.mod.locate(g, g.input("v", random_tensor(16, 8, rng)), g.input("l", random_tensor(1, 6, rng)), &tr);
  for (double x : tr.spatial_gate->data) CHECK(x == doctest::Approx(tr.spatial_gate->data[0]).epsilon(1e-14));
}

TEST_CASE("gate broadcast zeroes rows and columns") {
  Graph<double> g;
  std::mt19937_64 rng(6);
  auto v = g.input("v", random_tensor(4, 3, rng));
  auto rows = g.input("ws", Tensor<double>({4, 1}, {0.3, 0.0, 0.9, 1.0}));
  auto cols = g.input("wa", Tensor<double>({1, 3}, {0.5, 0.0, 0.2}));
  auto a = nx::mul(v, rows).value(), b = nx::mul(v, cols).value();
  for (std::size_t c = 0; c < 3; ++c) CHECK(a.at(1, c) == 0.0);
  for (std::size_t r = 0; r < 4; ++r) CHECK(b.at(r, 1) == 0.0);
}

TEST_CASE("verify with a single attribute token") {
  Fixture f(8, 6);
  std::mt19937_64 rng(7);
  Graph<double> g;
  auto l = random_tensor(1, 6, rng);
  pcm::StageModulationTrace<double> tr;
  f.mod.verify(g, g.input("v", random_tensor(16, 8, rng)), g.input("l", l), &tr);
  auto token = affine_row(l.data, f.param("pcm.verify.text.weight"), &f.param("pcm.verify.text.bias"));
  const double value = token[0] * f.param("pcm.verify.value").data[0];
  for (double x : tr.attribute_attention->data) CHECK(x == doctest::Approx(value).epsilon(1e-12));
}

TEST_CASE("progressive S-L-V equals the explicit composition") {
  Fixture f(8, 6);
  std::mt19937_64 rng(8);
  Graph<double> g;
  auto c = cues(g, 5, 3, 2, 6, rng);
  auto v = g.input("v", random_tensor(16, 8, rng));
  pcm::ModulatorConfig cfg;
  auto out = f.mod.modulate(g, v, c, cfg, nullptr);
  auto manual = f.mod.verify(g, f.mod.locate(g, f.mod.survey(g, v, c.context, nullptr), c.spatial, nullptr), c.attribute, nullptr);
  CHECK(out.value() == manual.value());
}

TEST_CASE("disabled modulation is the identity") {
  Fixture f(8, 6);
  std::mt19937_64 rng(9);
  Graph<double> g;
  auto c = cues(g, 5, 3, 2, 6, rng);
  auto v = g.input("v", random_tensor(16, 8, rng));
  pcm::ModulatorConfig cfg;
  cfg.enabled = false;
  pcm::StageModulationTrace<double> tr;
  auto out = f.mod.modulate(g, v, c, cfg, &tr);
  CHECK(out.value() == v.value());
  CHECK_FALSE(tr.context_gate.has_value());
  CHECK_FALSE(tr.spatial_gate.has_value());
  CHECK_FALSE(tr.attribute_gate.has_value());
}

TEST_CASE("every variant and ordering preserves shape, gate range and trace faithfulness") {
  Fixture f(8, 6);
  std::vector<pcm::ModulatorConfig> configs;
  for (auto v : {pcm::Variant::kContextOnly, pcm::Variant::kParallel, pcm::Variant::kSequential})
    { pcm::ModulatorConfig c; c.variant = v; configs.push_back(c); }
  for (const char* o : {"S-L-V", "S-V-L", "L-S-V", "L-V-S", "V-S-L", "V-L-S"})
    configs.push_back({pcm::Variant::kProgressive, pcm::parse_ordering(o), true});
  std::mt19937_64 rng(10);
  for (const auto& cfg : configs) {
    CAPTURE(pcm::variant_name(cfg.variant));
    CAPTURE(pcm::ordering_name(cfg.ordering));
    Graph<double> g;
    auto c = cues(g, 5, 3, 2, 6, rng);
    auto v = g.input("v", random_tensor(16, 8, rng, -3, 3));
    pcm::StageModulationTrace<double> tr;
    auto out = f.mod.modulate(g, v, c, cfg, &tr);
    CHECK(out.value().shape == v.value().shape);
    CHECK(tr.output == out.value());
    auto check = [](const std::optional<Tensor<double>>& att, const std::optional<Tensor<double>>& gate, bool transpose) {
      if (!gate) return;
      REQUIRE(att.has_value());
      CHECK(att->numel() == gate->numel());
      for (std::size_t i = 0; i < gate->numel(); ++i) {
        CHECK(gate->data[i] > 0.0);
        CHECK(gate->data[i] < 1.0);
        CHECK(std::abs(sigmoid(att->data[i]) - gate->data[i]) <= 1e-6);
      }
      (void)transpose;
    };
    check(tr.context_attention, tr.context_gate, false);
    check(tr.spatial_attention, tr.spatial_gate, false);
    check(tr.attribute_attention, tr.attribute_gate, true);
    const bool has_context = cfg.variant == pcm::Variant::kContextOnly || cfg.variant == pcm::Variant::kProgressive;
    CHECK(tr.context_gate.has_value() == has_context);
    CHECK(tr.spatial_gate.has_value() == (cfg.variant != pcm::Variant::kContextOnly));
  }
}

TEST_CASE("parallel variant applies both gates to the unmodulated input") {
  Fixture f(8, 6);
  std::mt19937_64 rng(11);
  Graph<double> g;
  auto c = cues(g, 5, 3, 2, 6, rng);
  auto v = g.input("v", random_tensor(16, 8, rng));
  pcm::ModulatorConfig cfg;
  cfg.variant = pcm::Variant::kParallel;
  pcm::StageModulationTrace<double> tr;
  auto out = f.mod.modulate(g, v, c, cfg, &tr);
  // both gates are functions of v alone
  auto ws = f.mod.locate_gate(g, v, c.spatial, nullptr);
  auto wa = f.mod.verify_gate(g, v, c.attribute, nullptr);
  CHECK(ws.value() == *tr.spatial_gate);
  CHECK(wa.value() == *tr.attribute_gate);
  const auto& wp = f.param("pcm.locate.proj.weight");
  const auto& bp = f.param("pcm.locate.proj.bias");
  for (std::size_t r = 0; r < 16; ++r) {
    std::vector<double> x(8);
    for (std::size_t k = 0; k < 8; ++k) x[k] = v.value().at(r, k) * ws.value().data[r] * wa.value().data[k];
    auto expect = affine_row(x, wp, &bp);
    for (std::size_t k = 0; k < 8; ++k) CHECK(out.value().at(r, k) == doctest::Approx(expect[k]).epsilon(1e-12));
  }
}

TEST_CASE("gradient checks through each attention and the full composition") {
  for (int block = 0; block < 4; ++block) {
    CAPTURE(block);
    Fixture f(6, 5, 12);
    test::randomize(f.store, 12 + block);
    std::mt19937_64 rng(13 + block);
    Graph<double> g;
    auto c = cues(g, 4, 3, 2, 5, rng);
    auto v = g.input("v", random_tensor(9, 6, rng), true);
    Var<double> out;
    switch (block) {
      case 0: out = f.mod.survey(g, v, c.context, nullptr); break;
      case 1: out = f.mod.locate(g, v, c.spatial, nullptr); break;
      case 2: out = f.mod.verify(g, v, c.attribute, nullptr); break;
      default: out = f.mod.modulate(g, v, c, pcm::ModulatorConfig{}, nullptr); break;
    }
    auto wrt = g.param_leaves();
    for (auto x : {v, c.context, c.spatial, c.attribute}) wrt.push_back(x);
    auto r = nx::grad_check(g, out, wrt, {.seed = static_cast<std::uint64_t>(block)});
    CHECK(r.max_relative_error <= 1e-4);
  }
}

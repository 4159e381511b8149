#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "fixtures.hpp"
#include "provg/error.hpp"
#include "provg/harness/ablate.hpp"
#include "provg/harness/config.hpp"
#include "provg/harness/model.hpp"
#include "provg/harness/pipeline.hpp"
#include "provg/numerics/grad_check.hpp"
#include "support.hpp"

using namespace provg;
using harness::RunConfig;
namespace fs = std::filesystem;

TEST_CASE("run config parsing and validation") {
  auto c = RunConfig::from_json(R"({"variant": "b", "steps": 50, "lambda_cons": 0.2, "seed": 3})");
  CHECK(c.variant == "b");
  CHECK(c.steps == 50);
  CHECK(c.lambdas.cons == 0.2);
  CHECK(c.lambdas.mask == 0.5);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(RunConfig::from_json(R"({"stepz": 5})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"lambda_mask": -0.5})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"variant": "z"})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"ordering": "S-L-L"})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"steps": 0})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"lr": "fast"})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_file("/nonexistent/config.json"), Error);

  auto o = harness::apply_overrides(c, R"({"pcm": false, "ordering": "V-L-S"})");
  CHECK_FALSE(o.model_options().modulator.enabled);
  CHECK(pcm::ordering_name(o.model_options().modulator.ordering) == "V-L-S");
  CHECK(o.steps == 50);
  CHECK_THROWS_AS(harness::apply_overrides(c, R"({"bogus": 1})"), ConfigError);
}

TEST_CASE("learning rate schedule decays twice") {
  RunConfig c;
  c.steps = 100;
  c.lr = 1e-3;
  CHECK(c.lr_at(0) == 1e-3);
  CHECK(c.lr_at(69) == 1e-3);
  CHECK(c.lr_at(70) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(c.lr_at(84) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(c.lr_at(85) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(c.lr_at(99) == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("AdamW update matches the closed form") {
  nx::ParamStore<double> store;
  store.add({"w", 1, 2, nx::Init::kZeros, 1.0, true});
  store.add({"b", 1, 1, nx::Init::kZeros, 1.0, false});
  store.initialize(0);
  store.value(0).data = {1.0, -2.0};
  store.value(1).data = {0.5};
  store.grad(0) = {0.3, -0.1};
  store.grad(1) = {2.0};
  RunConfig cfg;
  harness::AdamW<double> opt(store);
  opt.step(store, 0.01, cfg);
  // first step: m/bc1 = g, v/bc2 = g^2, so the update is lr * g / (|g| + eps)
  auto expect = [&](double w, double g, bool decay) {
    if (decay) w -= 0.01 * cfg.weight_decay * w;
    return w - 0.01 * g / (std::abs(g) + cfg.eps);
  };
  CHECK(store.value(0).data[0] == doctest::Approx(expect(1.0, 0.3, true)).epsilon(1e-12));
  CHECK(store.value(0).data[1] == doctest::Approx(expect(-2.0, -0.1, true)).epsilon(1e-12));
  CHECK(store.value(1).data[0] == doctest::Approx(expect(0.5, 2.0, false)).epsilon(1e-12));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("full network total-loss gradient check") {
  auto dims = nn::ModelDims::tiny();
  harness::Model<double> model(dims, {}, 5);
  test::randomize(model.params(), 5, 0.3);
  const auto data = test::small_examples(6, 1);
  nx::Graph<double> g;
  auto fwd = model.forward(g, data[0].image, data[0].cues);
  auto s = loss::sample_loss(g, fwd.prediction.box, fwd.prediction.mask_scores, data[0].box_normalized, data[0].mask,
                             loss::Lambdas{});
  auto r = nx::grad_check(g, s.total, g.param_leaves(), {.max_entries = 3, .seed = 9});
  CHECK(r.max_relative_error <= 1e-4);
  MESSAGE("full-network grad check: " << r.entries_checked << " entries, max error " << r.max_relative_error);
}

TEST_CASE("training is deterministic in 64-bit mode") {
  const auto data = test::small_examples(1, 6);
  auto cfg = test::tiny_config(6);
  cfg.seed = 4;
  auto run = [&](std::string* log) {
    harness::Model<double> model(cfg.dims(), cfg.model_options(), cfg.seed);
    std::ostringstream out;
    auto steps = harness::train(model, cfg, data, &out);
    std::vector<double> losses;
    for (const auto& s : steps) losses.push_back(s.loss.total);
    std::vector<double> params;
    for (std::size_t i = 0; i < model.params().size(); ++i)
      for (double v : model.params().value(i).data) params.push_back(v);
    std::string l = out.str();
    // drop the wall-time column
    std::string stripped;
    std::istringstream in(l);
    for (std::string line; std::getline(in, line);) stripped += line.substr(0, line.rfind(',')) + "\n";
    *log = stripped;
    return std::make_pair(losses, params);
  };
  std::string la, lb;
  auto a = run(&la);
  auto b = run(&lb);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(la == lb);
  CHECK(a.first.size() == 6);
}

TEST_CASE("training log has one row per step and honours a zero consistency weight") {
  const auto data = test::small_examples(2, 4);
  auto cfg = test::tiny_config(5);
  cfg.lambdas.cons = 0;
  harness::Model<double> model(cfg.dims(), cfg.model_options(), 1);
  std::ostringstream out;
  auto steps = harness::train(model, cfg, data, &out);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == harness::train_log_header());
  int rows = 0;
  for (std::string line; std::getline(in, line); ++rows) {
    std::vector<double> f;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) f.push_back(std::stod(cell));
    REQUIRE(f.size() == 12);
    // total = box + 0.5 mask, whatever the cons column holds
    CHECK(f[2] == doctest::Approx(f[3] + 0.5 * f[6]).epsilon(1e-6));
  }
  CHECK(rows == 5);
  for (const auto& s : steps) CHECK(s.loss.total == doctest::Approx(s.loss.box + 0.5 * s.loss.mask).epsilon(1e-12));
}

TEST_CASE("every ablation switch keeps the network trainable") {
  const auto data = test::small_examples(3, 4);
  for (const char* overrides : {R"({"pcm": false})", R"({"cfm": false})", R"({"lcm": false})", R"({"fa": false})",
                                R"({"variant": "a"})", R"({"variant": "b"})", R"({"variant": "c"})"}) {
    CAPTURE(overrides);
    auto cfg = harness::apply_overrides(test::tiny_config(3), overrides);
    harness::Model<double> model(cfg.dims(), cfg.model_options(), 2);
    auto before = model.params().value(0).data;
    auto steps = harness::train(model, cfg, data);
    REQUIRE(steps.size() == 3);
    for (const auto& s : steps) CHECK(std::isfinite(s.loss.total));
    CHECK(model.params().value(0).data != before);
  }
}

TEST_CASE("scoring oracle and empty predictions") {
  const auto data = test::small_examples(4, 12);
  std::vector<harness::Prediction> oracle;
  for (const auto& ex : data) oracle.push_back({ex.box_normalized, ex.mask});
  auto m = harness::score(oracle, data);
  for (const auto* t : {&m.rec, &m.res, &m.res_box}) {
    for (double p : t->precision) CHECK(p == 1.0);
    CHECK(t->oiou == 1.0);
    CHECK(t->miou == 1.0);
  }
  oracle[3].mask = geo::Mask(data[3].mask.height, data[3].mask.width);
  auto e = harness::score(oracle, data);
  CHECK(e.res_box.miou == doctest::Approx(11.0 / 12.0).epsilon(1e-12));
  CHECK(e.res.miou == doctest::Approx(11.0 / 12.0).epsilon(1e-12));
  CHECK(e.rec.miou == 1.0);
  oracle.pop_back();
  CHECK_THROWS_AS(harness::score(oracle, data), Error);
}

TEST_CASE("untrained model sits near chance") {
  synth::SceneSpec spec;
  spec.seed = 21;
  const auto data = harness::prepare(synth::Dataset{spec, synth::generate(spec, 128)});
  harness::Model<float> model(nn::ModelDims{}, {}, 0);
  auto m = harness::evaluate(model, data);
  MESSAGE("untrained default model on 128 samples: REC mIoU " << m.rec.miou << ", RES mIoU " << m.res.miou);
  CHECK(std::isfinite(m.res.miou));
}

TEST_CASE("checkpoint round trip") {
  const auto data = test::small_examples(5, 6);
  auto cfg = test::tiny_config(4);
  harness::Model<double> model(cfg.dims(), cfg.model_options(), 3);
  harness::train(model, cfg, data);
  const auto dir = test::scratch_dir("ckpt");
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  harness::save_checkpoint(model, cfg, 4, dir / "a" / "model.json");
  auto loaded = harness::load_checkpoint<double>(dir / "a" / "model.json");
  CHECK(loaded.step == 4);
  CHECK(loaded.config.to_json() == cfg.to_json());
  harness::save_checkpoint(*loaded.model, loaded.config, loaded.step, dir / "b" / "model.json");
  CHECK(test::slurp(dir / "a" / "model.json") == test::slurp(dir / "b" / "model.json"));
  CHECK(test::slurp(dir / "a" / "model.bin") == test::slurp(dir / "b" / "model.bin"));
  CHECK(fs::file_size(dir / "a" / "model.bin") == 4 * model.params().total_size());

  // metrics survive exactly once weights are float32 on both sides
  auto reloaded = harness::load_checkpoint<double>(dir / "b" / "model.json");
  CHECK(harness::evaluate(*loaded.model, data) == harness::evaluate(*reloaded.model, data));
  auto as_float = harness::load_checkpoint<float>(dir / "a" / "model.json");
  CHECK(harness::evaluate(*as_float.model, data) == harness::evaluate(*harness::load_checkpoint<float>(dir / "b" / "model.json").model, data));

  // corrupt blob length
  {
    std::ofstream out(dir / "b" / "model.bin", std::ios::binary | std::ios::trunc);
    out << "abcd";
  }
  CHECK_THROWS_AS(harness::load_checkpoint<double>(dir / "b" / "model.json"), Error);
  CHECK_THROWS_AS(harness::load_checkpoint<double>(dir / "missing.json"), Error);
  fs::remove_all(dir);
}

TEST_CASE("attention export writes twelve grayscale maps") {
  synth::SceneSpec spec;
  spec.seed = 8;
  const auto data = harness::prepare(synth::Dataset{spec, synth::generate(spec, 1)});
  harness::Model<float> model(nn::ModelDims{}, {}, 1);
  const auto dir = test::scratch_dir("attn");
  auto files = harness::export_attention(model, data[0], dir);
  REQUIRE(files.size() == 12);
  for (const auto& f : files) {
    CAPTURE(f.string());
    std::istringstream in(test::slurp(f));
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    CHECK(magic == "P2");
    CHECK(w == 64);
    CHECK(h == 64);
    CHECK(maxval == 255);
    std::size_t count = 0;
    bool in_range = true;
    for (long v; in >> v; ++count) in_range &= v >= 0 && v <= 255;
    CHECK(count == 64 * 64);
    CHECK(in_range);
  }
  auto pgm = harness::gray_pgm({0.0, 1.0, -3.0, 0.5}, 2);
  CHECK(pgm == "P2\n2 2\n255\n0 255\n0 128\n");
  fs::remove_all(dir);
}

TEST_CASE("grid parsing") {
  auto cells = harness::parse_grid(R"({"cells": [{"label": "d", "variant": "d"}, {"label": "b", "variant": "b"}]})");
  REQUIRE(cells.size() == 2);
  CHECK(cells[1].label == "b");
  auto axes = harness::parse_grid(R"({"axes": {"lambda_cons": [0, 0.1, 0.2], "ordering": ["S-L-V", "V-L-S"]}})");
  CHECK(axes.size() == 6);
  auto orderings = harness::parse_grid(R"({"axes": {"ordering": ["S-L-V", "S-V-L", "L-V-S", "V-L-S"]}})");
  CHECK(orderings.size() == 4);
  CHECK_THROWS_AS(harness::parse_grid(R"({"cells": [{"label": "x", "nope": 1}]})"), ConfigError);
  CHECK_THROWS_AS(harness::parse_grid(R"({"axes": {"lambda_mask": [-1]}})"), ConfigError);
  CHECK_THROWS_AS(harness::parse_grid(R"({"rows": []})"), ConfigError);
}

TEST_CASE("ablation sweep records failures and reports medians") {
  const auto dir = test::scratch_dir("ablate");
  const auto spec = test::small_scene_spec(7);
  synth::write_dataset(synth::generate(spec, 4), spec, dir / "data");
  auto base = test::tiny_config(2);
  base.data_dir = (dir / "data").string();
  auto grid = harness::parse_grid(
      R"({"cells": [{"label": "d", "variant": "d"}, {"label": "b", "variant": "b"}, {"label": "diverges", "lr": 1e300}]})");
  auto results = harness::ablate<double>(base, grid, {1, 2});
  REQUIRE(results.size() == 3);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(results[i].runs.size() == 2);
    CHECK(results[i].median.has_value());
  }
  CHECK_FALSE(results[2].median.has_value());
  CHECK_FALSE(results[2].runs[0].error.empty());
  std::istringstream table(harness::ablation_table_csv(results));
  int lines = 0;
  for (std::string line; std::getline(table, line);) ++lines;
  CHECK(lines == 4);  // header + 3 cells
  fs::remove_all(dir);

  std::vector<geo::MetricsReport> reports(3);
  reports[0].res.miou = 0.2, reports[1].res.miou = 0.9, reports[2].res.miou = 0.4;
  CHECK(harness::median_report(reports).res.miou == 0.4);
}

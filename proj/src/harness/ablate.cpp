#include "provg/harness/ablate.hpp"

#include <algorithm>
#include <exception>

#include <json.hpp>

#include "provg/error.hpp"
#include "provg/harness/pipeline.hpp"

namespace provg::harness {

using json = nlohmann::json;

namespace {

std::string describe(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

std::vector<GridCell> parse_grid(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("grid must be a JSON object");
  std::vector<GridCell> cells;
  if (j.contains("cells")) {
    for (const auto& c : j.at("cells")) {
      if (!c.is_object()) throw ConfigError("grid cells must be objects");
      json o = c;
      std::string label;
      if (o.contains("label")) {
        label = o.at("label").get<std::string>();
        o.erase("label");
      } else {
        for (auto it = o.begin(); it != o.end(); ++it)
          label += (label.empty() ? "" : " ") + it.key() + "=" + describe(it.value());
      }
      cells.push_back({label.empty() ? "base" : label, o.dump()});
    }
  } else if (j.contains("axes")) {
    std::vector<json> partial{json::object()};
    for (auto it = j.at("axes").begin(); it != j.at("axes").end(); ++it) {
      if (!it.value().is_array() || it.value().empty())
        throw ConfigError("grid axis '" + it.key() + "' must be a non-empty array");
      std::vector<json> next;
      for (const auto& p : partial)
        for (const auto& v : it.value()) {
          json q = p;
          q[it.key()] = v;
          next.push_back(q);
        }
      partial = std::move(next);
    }
    for (const auto& o : partial) {
      std::string label;
      for (auto it = o.begin(); it != o.end(); ++it)
        label += (label.empty() ? "" : " ") + it.key() + "=" + describe(it.value());
      cells.push_back({label.empty() ? "base" : label, o.dump()});
    }
  } else {
    throw ConfigError("grid needs a 'cells' list or an 'axes' object");
  }
  for (const auto& k : j.items())
    if (k.key() != "cells" && k.key() != "axes") throw ConfigError("grid: unknown key '" + k.key() + "'");
  if (cells.empty()) throw ConfigError("grid has no cells");
  // reject bad cells before any training starts
  RunConfig probe;
  for (const auto& c : cells) apply_overrides(probe, c.overrides);
  return cells;
}

geo::MetricsReport median_report(const std::vector<geo::MetricsReport>& reports) {
  if (reports.empty()) throw Error("median of no reports");
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  auto track = [&](auto pick) {
    geo::TrackMetrics t;
    std::vector<double> vals;
    for (std::size_t k = 0; k < 5; ++k) {
      vals.clear();
      for (const auto& r : reports) vals.push_back(pick(r).precision[k]);
      t.precision[k] = med(vals);
    }
    vals.clear();
    for (const auto& r : reports) vals.push_back(pick(r).oiou);
    t.oiou = med(vals);
    vals.clear();
    for (const auto& r : reports) vals.push_back(pick(r).miou);
    t.miou = med(vals);
    t.count = pick(reports.front()).count;
    return t;
  };
  geo::MetricsReport m;
  m.rec = track([](const geo::MetricsReport& r) -> const geo::TrackMetrics& { return r.rec; });
  m.res = track([](const geo::MetricsReport& r) -> const geo::TrackMetrics& { return r.res; });
  m.res_box = track([](const geo::MetricsReport& r) -> const geo::TrackMetrics& { return r.res_box; });
  return m;
}

template <typename T>
std::vector<CellResult> ablate(const RunConfig& base, const std::vector<GridCell>& grid,
                               const std::vector<std::uint64_t>& seeds,
                               const std::function<void(const std::string&)>& progress) {
  if (seeds.empty()) throw ConfigError("ablate needs at least one seed");
  std::size_t image_size = 0;
  const auto train_set = load_examples(base.data_dir, &image_size);
  const auto test_set = base.test_dir.empty() ? train_set : load_examples(base.test_dir);

  std::vector<CellResult> results;
  for (const auto& cell : grid) {
    CellResult cr;
    cr.cell = cell;
    std::vector<geo::MetricsReport> ok;
    for (auto seed : seeds) {
      CellRun run;
      run.seed = seed;
      try {
        auto cfg = apply_overrides(base, cell.overrides);
        cfg.seed = seed;
        auto dims = cfg.dims();
        dims.image_size = image_size;
        Model<T> model(dims, cfg.model_options(), seed);
        train(model, cfg, train_set);
        run.metrics = evaluate(model, test_set);
        ok.push_back(*run.metrics);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      if (progress)
        progress(cell.label + " seed " + std::to_string(seed) +
                 (run.metrics ? ": RES mIoU " + std::to_string(run.metrics->res.miou) : ": failed: " + run.error));
      cr.runs.push_back(std::move(run));
    }
    if (!ok.empty()) cr.median = median_report(ok);
    results.push_back(std::move(cr));
  }
  return results;
}

namespace {

std::string quoted(const std::string& s) {
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

std::string ablation_runs_csv(const std::vector<CellResult>& results) {
  std::string s = "cell,seed,status," + geo::metrics_csv_header().substr(geo::metrics_csv_header().find(',') + 1) + "\n";
  for (const auto& r : results)
    for (const auto& run : r.runs) {
      if (run.metrics) {
        auto row = geo::metrics_csv_row("", *run.metrics);
        s += quoted(r.cell.label) + "," + std::to_string(run.seed) + ",ok" + row + "\n";
      } else {
        s += quoted(r.cell.label) + "," + std::to_string(run.seed) + "," + quoted("failed: " + run.error) + "\n";
      }
    }
  return s;
}

std::string ablation_table_csv(const std::vector<CellResult>& results) {
  std::string s = "cell,seeds_ok," + geo::metrics_csv_header().substr(geo::metrics_csv_header().find(',') + 1) + "\n";
  for (const auto& r : results) {
    std::size_t n = 0;
    for (const auto& run : r.runs) n += run.metrics.has_value();
    s += quoted(r.cell.label) + "," + std::to_string(n);
    if (r.median) s += geo::metrics_csv_row("", *r.median);
    s += "\n";
  }
  return s;
}

std::string ablation_table_text(const std::vector<CellResult>& results) {
  std::vector<std::pair<std::string, geo::MetricsReport>> rows;
  std::string failed;
  for (const auto& r : results) {
    if (r.median) rows.emplace_back(r.cell.label, *r.median);
    else failed += "  " + r.cell.label + ": all seeds failed\n";
  }
  return (rows.empty() ? std::string() : geo::format_metrics_table(rows)) + failed;
}

template std::vector<CellResult> ablate<float>(const RunConfig&, const std::vector<GridCell>&,
                                               const std::vector<std::uint64_t>&,
                                               const std::function<void(const std::string&)>&);
template std::vector<CellResult> ablate<double>(const RunConfig&, const std::vector<GridCell>&,
                                                const std::vector<std::uint64_t>&,
                                                const std::function<void(const std::string&)>&);

}  // namespace provg::harness

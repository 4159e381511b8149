#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "provg/geometry/geometry.hpp"
#include "provg/harness/config.hpp"

namespace provg::harness {

struct GridCell {
  std::string label;
  std::string overrides;  // JSON object applied on top of the base config
};

/// Accepts {"cells": [{"label": ..., <config keys>}, ...]} or
/// {"axes": {"<config key>": [v1, v2, ...], ...}} (cartesian product).
std::vector<GridCell> parse_grid(const std::string& text);

struct CellRun {
  std::uint64_t seed = 0;
  std::optional<geo::MetricsReport> metrics;
  std::string error;
};

struct CellResult {
  GridCell cell;
  std::vector<CellRun> runs;
  /// Median over successful seeds; empty when every seed failed.
  std::optional<geo::MetricsReport> median;
};

geo::MetricsReport median_report(const std::vector<geo::MetricsReport>& reports);

/// Trains and evaluates every cell for every seed. A failing run is recorded
/// and the sweep continues. Evaluation uses base.test_dir when set.
template <typename T>
std::vector<CellResult> ablate(const RunConfig& base, const std::vector<GridCell>& grid,
                               const std::vector<std::uint64_t>& seeds,
                               const std::function<void(const std::string&)>& progress = {});

std::string ablation_runs_csv(const std::vector<CellResult>& results);
std::string ablation_table_csv(const std::vector<CellResult>& results);
std::string ablation_table_text(const std::vector<CellResult>& results);

}  // namespace provg::harness

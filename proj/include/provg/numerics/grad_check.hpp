#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "provg/numerics/graph.hpp"

namespace provg::nx {

struct GradCheckOptions {
  double step = 1e-5;
  /// Entries probed per tensor; 0 probes every entry. Probed entries are
  /// chosen with a seeded generator.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0;
  std::string worst_label;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of sum(c * out), with c a fixed random
/// projection (c = 1 for scalar outputs), against central differences
/// obtained by perturbing each leaf in `wrt` and replaying the graph.
/// Error per entry is |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(Graph<double>& graph, Var<double> out,
                           const std::vector<Var<double>>& wrt,
                           const GradCheckOptions& options = {});

}  // namespace provg::nx

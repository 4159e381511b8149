#include "provg/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace provg::nx {

namespace {

double project(const Tensor<double>& v, const std::vector<double>& c) {
  double s = 0;
  for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * v.data[i];
  return s;
}

}  // namespace

GradCheckResult grad_check(Graph<double>& graph, Var<double> out, const std::vector<Var<double>>& wrt,
                           const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  const auto& ov = graph.value(out);
  std::vector<double> c(ov.numel(), 1.0);
  if (c.size() > 1) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (auto& x : c) x = d(rng);
  }
  Tensor<double> seed(ov.shape, c);
  graph.backward(out, seed);

  std::vector<Tensor<double>> analytic;
  analytic.reserve(wrt.size());
  for (const auto& v : wrt) analytic.push_back(graph.grad(v));

  GradCheckResult result;
  for (std::size_t w = 0; w < wrt.size(); ++w) {
    const Tensor<double> base = graph.value(wrt[w]);
    std::vector<std::size_t> entries(base.numel());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries && entries.size() > options.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries);
    }
    for (std::size_t e : entries) {
      Tensor<double> probe = base;
      probe.data[e] = base.data[e] + options.step;
      graph.set_value(wrt[w], probe);
      graph.replay();
      const double up = project(graph.value(out), c);
      probe.data[e] = base.data[e] - options.step;
      graph.set_value(wrt[w], probe);
      graph.replay();
      const double down = project(graph.value(out), c);
      const double numeric = (up - down) / (2 * options.step);
      const double err =
          std::abs(analytic[w].data[e] - numeric) / std::max(1.0, std::abs(numeric));
      if (!std::isfinite(err)) throw NonFiniteError("non-finite gradient check at " + graph.label(wrt[w].id));
      ++result.entries_checked;
      if (err > result.max_relative_error || result.worst_label.empty()) {
        result.max_relative_error = std::max(err, result.max_relative_error);
        result.worst_label = graph.label(wrt[w].id) + "[" + std::to_string(e) + "]";
      }
    }
    graph.set_value(wrt[w], base);
    graph.replay();
  }
  return result;
}

}  // namespace provg::nx

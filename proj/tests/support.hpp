#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "provg/numerics/tensor.hpp"

namespace provg::test {

template <typename T = double>
nx::Tensor<T> random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nx::Tensor<T> t(rows, cols);
  for (auto& x : t.data) x = static_cast<T>(u(rng));
  return t;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace provg::test

#include "provg/numerics/params.hpp"

namespace provg::test {

/// Overwrites every parameter with uniform values in [-scale, scale] so
/// zero-initialized branches take part in gradient checks.
template <typename T>
void randomize(nx::ParamStore<T>& store, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto& x : store.value(i).data) x = static_cast<T>(u(rng));
}

}  // namespace provg::test

// Parallel kernels against their serial references, at the sizes the
// default model uses.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "provg/numerics/kernels.hpp"

namespace k = provg::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_gemm_nn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
             kk = static_cast<std::size_t>(state.range(2));
  auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm_nn(m, n, kk, a.data(), b.data(), c.data(), false);
    else k::reference::gemm_nn(m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * kk));
}

template <bool Parallel>
void BM_gemm_tn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
             kk = static_cast<std::size_t>(state.range(2));
  auto a = random_vec(kk * m, 3), b = random_vec(kk * n, 4);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm_tn(m, n, kk, a.data(), b.data(), c.data(), false);
    else k::reference::gemm_tn(m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * kk));
}

// 3x3 convolution: im2col + GEMM against the direct loop.
template <bool Parallel>
void BM_conv3x3(benchmark::State& state) {
  k::ConvGeom g;
  g.height = g.width = static_cast<std::size_t>(state.range(0));
  g.in_ch = g.out_ch = static_cast<std::size_t>(state.range(1));
  g.kernel = 3;
  g.pad = 1;
  auto x = random_vec(g.height * g.width * g.in_ch, 5), w = random_vec(g.patch() * g.out_ch, 6);
  const std::size_t rows = g.out_h() * g.out_w();
  std::vector<float> cols(rows * g.patch()), y(rows * g.out_ch);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::im2col(g, x.data(), cols.data());
      k::gemm_nn(rows, g.out_ch, g.patch(), cols.data(), w.data(), y.data(), false);
    } else {
      k::reference::conv2d_direct(g, x.data(), w.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_depthwise(benchmark::State& state) {
  k::ConvGeom g;
  g.height = g.width = static_cast<std::size_t>(state.range(0));
  g.in_ch = g.out_ch = static_cast<std::size_t>(state.range(1));
  g.kernel = 3;
  g.pad = 1;
  auto x = random_vec(g.height * g.width * g.in_ch, 7), w = random_vec(9 * g.in_ch, 8);
  std::vector<float> y(g.height * g.width * g.in_ch);
  for (auto _ : state) {
    if constexpr (Parallel) k::depthwise_conv(g, x.data(), w.data(), y.data());
    else k::reference::depthwise_conv(g, x.data(), w.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void gemm_sizes(benchmark::internal::Benchmark* b) {
  b->Args({256, 64, 64})->Args({256, 64, 576})->Args({1024, 64, 288})->Args({64, 256, 256});
}

}  // namespace

BENCHMARK(BM_gemm_nn<true>)->Name("gemm_nn/parallel")->Apply(gemm_sizes);
BENCHMARK(BM_gemm_nn<false>)->Name("gemm_nn/reference")->Apply(gemm_sizes);
BENCHMARK(BM_gemm_tn<true>)->Name("gemm_tn/parallel")->Apply(gemm_sizes);
BENCHMARK(BM_gemm_tn<false>)->Name("gemm_tn/reference")->Apply(gemm_sizes);
BENCHMARK(BM_conv3x3<true>)->Name("conv3x3/im2col_parallel")->Args({32, 64})->Args({16, 64})->Args({8, 128});
BENCHMARK(BM_conv3x3<false>)->Name("conv3x3/direct_reference")->Args({32, 64})->Args({16, 64})->Args({8, 128});
BENCHMARK(BM_depthwise<true>)->Name("depthwise3x3/parallel")->Args({16, 32})->Args({8, 64})->Args({4, 128})->Args({2, 256});
BENCHMARK(BM_depthwise<false>)->Name("depthwise3x3/reference")->Args({16, 32})->Args({8, 64})->Args({4, 128})->Args({2, 256});

BENCHMARK_MAIN();

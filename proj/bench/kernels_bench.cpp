// Reference vs OpenMP kernels at the shapes a desk training batch produces
// (64 pairs x 4 robots = 256 observations of 11 x 11).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "magat/autodiff.hpp"
#include "magat/kernels.hpp"
#include "magat/runtime.hpp"

using namespace magat;
using kernels::Backend;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

struct GemmShape {
  int m, n, k;
};
// conv blocks 1-3 as GEMMs, then the first fully connected layer
constexpr GemmShape kShapes[] = {{30976, 32, 27}, {6400, 64, 288}, {1024, 128, 576}, {256, 128, 512}};

template <Backend B>
void BM_Gemm(benchmark::State& state) {
  const GemmShape s = kShapes[state.range(0)];
  const auto a = noise(static_cast<std::size_t>(s.m) * s.k, 1);
  const auto b = noise(static_cast<std::size_t>(s.k) * s.n, 2);
  std::vector<double> c(static_cast<std::size_t>(s.m) * s.n);
  for (auto _ : state) {
    if constexpr (B == Backend::Reference)
      kernels::gemm_reference(false, false, s.m, s.n, s.k, a.data(), s.k, b.data(), s.n, 0.0, c.data(), s.n);
    else
      kernels::gemm_parallel(false, false, s.m, s.n, s.k, a.data(), s.k, b.data(), s.n, 0.0, c.data(), s.n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(s.m) * s.n * s.k);
  state.SetLabel(std::to_string(s.m) + "x" + std::to_string(s.n) + "x" + std::to_string(s.k));
}

// the weight-gradient GEMM of the second conv block: cols^T dy
template <Backend B>
void BM_GemmTransposed(benchmark::State& state) {
  const int m = 288, n = 64, k = 6400;
  const auto a = noise(static_cast<std::size_t>(k) * m, 3);
  const auto b = noise(static_cast<std::size_t>(k) * n, 4);
  std::vector<double> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    if constexpr (B == Backend::Reference)
      kernels::gemm_reference(true, false, m, n, k, a.data(), m, b.data(), n, 0.0, c.data(), n);
    else
      kernels::gemm_parallel(true, false, m, n, k, a.data(), m, b.data(), n, 0.0, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(m) * n * k);
}

kernels::ConvShape conv_shape(int block) {
  constexpr int size[] = {11, 5, 2}, channels[] = {3, 32, 64};
  return {.batch = 256, .height = size[block], .width = size[block], .channels = channels[block]};
}

template <Backend B>
void BM_Im2col(benchmark::State& state) {
  const auto s = conv_shape(static_cast<int>(state.range(0)));
  const auto x = noise(static_cast<std::size_t>(s.batch) * s.height * s.width * s.channels, 5);
  std::vector<double> cols(s.patch_rows() * s.patch_cols());
  for (auto _ : state) {
    if constexpr (B == Backend::Reference)
      kernels::im2col_reference(s, x.data(), cols.data());
    else
      kernels::im2col_parallel(s, x.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(cols.size() * sizeof(double)));
}

template <Backend B>
void BM_Col2im(benchmark::State& state) {
  const auto s = conv_shape(static_cast<int>(state.range(0)));
  const auto cols = noise(s.patch_rows() * s.patch_cols(), 6);
  std::vector<double> dx(static_cast<std::size_t>(s.batch) * s.height * s.width * s.channels);
  for (auto _ : state) {
    std::fill(dx.begin(), dx.end(), 0.0);
    if constexpr (B == Backend::Reference)
      kernels::col2im_reference(s, cols.data(), dx.data());
    else
      kernels::col2im_parallel(s, cols.data(), dx.data());
    benchmark::DoNotOptimize(dx.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(cols.size() * sizeof(double)));
}

// whole conv layer through autodiff, forward and backward
template <Backend B>
void BM_Conv2dTrainStep(benchmark::State& state) {
  const auto s = conv_shape(static_cast<int>(state.range(0)));
  const int out = s.channels == 3 ? 32 : s.channels * 2;
  const kernels::ScopedBackend scoped(B);
  ad::Tensor x = ad::parameter({s.batch, s.height, s.width, s.channels},
                               noise(static_cast<std::size_t>(s.batch) * s.height * s.width * s.channels, 7));
  ad::Tensor w = ad::parameter({9 * s.channels, out}, noise(9 * static_cast<std::size_t>(s.channels) * out, 8));
  ad::Tensor b = ad::parameter({out}, noise(out, 9));
  for (auto _ : state) {
    ad::backward(ad::sum(ad::conv2d(x, w, b, 3, 1, 1)));
    benchmark::ClobberMemory();
  }
}

}  // namespace

BENCHMARK(BM_Gemm<Backend::Reference>)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<Backend::Parallel>)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmTransposed<Backend::Reference>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmTransposed<Backend::Parallel>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Im2col<Backend::Reference>)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Im2col<Backend::Parallel>)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Col2im<Backend::Reference>)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Col2im<Backend::Parallel>)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Conv2dTrainStep<Backend::Reference>)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dTrainStep<Backend::Parallel>)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}

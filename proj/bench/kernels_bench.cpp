// SPDX-License-Identifier: Apache-2.0
// Serial reference kernels against their OpenMP counterparts. The thread
// count of the parallel variant is the benchmark argument.
#include <benchmark/benchmark.h>

#include <random>

#include "stereodet/disparity_gt.hpp"
#include "stereodet/ops.hpp"
#include "stereodet/parallel.hpp"
#include "stereodet/reference.hpp"
#include "stereodet/stereo_matching.hpp"
#include "stereodet/synthetic.hpp"

namespace {

using namespace stereodet;

Tensor random_tensor(Shape shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

struct ConvInputs {
  Tensor x = random_tensor({1, 64, 72, 160}, 1);
  Tensor w = random_tensor({64, 64, 3, 3}, 2);
  std::vector<float> b = std::vector<float>(64, 0.1f);
  Conv2dParams p{1, 1, 1};
};

const ConvInputs& conv_inputs() {
  static const ConvInputs in;
  return in;
}

struct PairInputs {
  Tensor l = random_tensor({1, 64, 72, 320}, 3);
  Tensor r = random_tensor({1, 64, 72, 320}, 4);
};

const PairInputs& pair_inputs() {
  static const PairInputs in;
  return in;
}

void BM_conv2d_reference(benchmark::State& state) {
  const auto& in = conv_inputs();
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv2d(in.x, in.w, in.b, in.p));
}

void BM_conv2d_parallel(benchmark::State& state) {
  const auto& in = conv_inputs();
  ScopedThreads threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(in.x, in.w, in.b, in.p));
}

void BM_correlation_reference(benchmark::State& state) {
  const auto& in = pair_inputs();
  for (auto _ : state) benchmark::DoNotOptimize(reference::correlation_volume(in.l, in.r, 96));
}

void BM_correlation_parallel(benchmark::State& state) {
  const auto& in = pair_inputs();
  ScopedThreads threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(correlation_volume(in.l, in.r, 96));
}

void BM_concatenation_reference(benchmark::State& state) {
  const auto& in = pair_inputs();
  for (auto _ : state) benchmark::DoNotOptimize(reference::concatenation_volume(in.l, in.r, 96));
}

void BM_concatenation_parallel(benchmark::State& state) {
  const auto& in = pair_inputs();
  ScopedThreads threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(concatenation_volume(in.l, in.r, 96));
}

void BM_block_match_reference(benchmark::State& state) {
  const auto pair = make_shift_pair(5, 621, 187, 7);
  for (auto _ : state) benchmark::DoNotOptimize(reference::block_match(pair.first, pair.second, {}));
}

void BM_block_match_parallel(benchmark::State& state) {
  const auto pair = make_shift_pair(5, 621, 187, 7);
  ScopedThreads threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(block_match(pair.first, pair.second, {}));
}

void thread_args(benchmark::internal::Benchmark* b) {
  b->Arg(1);
  if (max_threads() > 1) b->Arg(max_threads());
  b->Unit(benchmark::kMillisecond)->UseRealTime();
}

}  // namespace

BENCHMARK(BM_conv2d_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_parallel)->Apply(thread_args);
BENCHMARK(BM_correlation_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_correlation_parallel)->Apply(thread_args);
BENCHMARK(BM_concatenation_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_concatenation_parallel)->Apply(thread_args);
BENCHMARK(BM_block_match_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_block_match_parallel)->Apply(thread_args);

BENCHMARK_MAIN();

// OpenMP kernels against the serial reference implementation on the
// standard 1x12x12x1 network.

#include <benchmark/benchmark.h>

#include <random>

#include "onn/network.hpp"

using namespace onn;

namespace {

OnnModel bench_model(int set) {
  OnnModel m = make_model(Architecture::standard());
  std::mt19937_64 rng(1);
  init_weights(m, rng, 0.3);
  for (int l : m.arch.hidden_layers()) assign_operators(m, l, std::vector<int>(12, set), full_library());
  return m;
}

FeatureMap bench_input(int size) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FeatureMap x(size, size);
  for (double& v : x.values) v = u(rng);
  return x;
}

template <bool Reference>
void BM_Forward(benchmark::State& state) {
  const OnnModel m = bench_model(static_cast<int>(state.range(1)));
  const std::vector<FeatureMap> x{bench_input(static_cast<int>(state.range(0)))};
  for (auto _ : state) {
    if constexpr (Reference) {
      benchmark::DoNotOptimize(reference::forward(m, x));
    } else {
      benchmark::DoNotOptimize(forward(m, x));
    }
  }
}

template <bool Reference>
void BM_Backward(benchmark::State& state) {
  const OnnModel m = bench_model(static_cast<int>(state.range(1)));
  const int size = static_cast<int>(state.range(0));
  const std::vector<FeatureMap> x{bench_input(size)};
  const ForwardTrace tr = forward(m, x);
  const auto delta = output_delta(m, tr, {FeatureMap(size, size, 0.1)});
  for (auto _ : state) {
    if constexpr (Reference) {
      benchmark::DoNotOptimize(reference::backward(m, tr, delta));
    } else {
      benchmark::DoNotOptimize(backward(m, tr, delta));
    }
  }
}

// Args: image side, operator set (0 = CNN, 6 = sum/tanh/chirp, 14 = median/tanh/linear).
void sizes(benchmark::internal::Benchmark* b) {
  for (int set : {0, 6, 14}) b->Args({60, set});
  b->Args({120, 0});
  b->Unit(benchmark::kMillisecond);
}

BENCHMARK(BM_Forward<false>)->Name("forward/openmp")->Apply(sizes);
BENCHMARK(BM_Forward<true>)->Name("forward/reference")->Apply(sizes);
BENCHMARK(BM_Backward<false>)->Name("backward/openmp")->Apply(sizes);
BENCHMARK(BM_Backward<true>)->Name("backward/reference")->Apply(sizes);

}  // namespace
BENCHMARK_MAIN();

// Serial reference vs OpenMP kernels. Thread count from OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "qolab/agent.hpp"
#include "qolab/catalog.hpp"
#include "qolab/kernels.hpp"

using namespace qolab;

namespace {

FeatureMatrix batch(int rows, int cols) {
  Rng rng(1);
  FeatureMatrix x(cols);
  for (int i = 0; i < rows; ++i)
    for (auto& v : x.append_row()) v = uniform01(rng);
  return x;
}

const NetworkParams& net() {
  static const NetworkParams p = init_network(88, {128, 64}, 1);
  return p;
}

template <void (*Predict)(const NetworkParams&, const FeatureMatrix&, std::span<double>)>
void BM_predict(benchmark::State& state) {
  const auto x = batch(static_cast<int>(state.range(0)), 88);
  std::vector<double> out(x.rows());
  for (auto _ : state) {
    Predict(net(), x, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <NetworkParams (*Gradient)(const NetworkParams&, const FeatureMatrix&, std::span<const double>)>
void BM_gradient(benchmark::State& state) {
  const auto x = batch(static_cast<int>(state.range(0)), 88);
  const std::vector<double> w(x.rows(), 1.0 / x.rows());
  for (auto _ : state) benchmark::DoNotOptimize(Gradient(net(), x, w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

// six-relation queries from a fixed world
const Workload& six() {
  static const Catalog cat = generate_catalog({}, 3);
  static const Workload w = [] {
    WorkloadSpec s;
    s.query_count = 4;
    s.min_relations = s.max_relations = 6;
    return generate_workload(cat, s, 4);
  }();
  return w;
}

template <kernels::BruteForceResult (*Brute)(const Catalog&, const Query&)>
void BM_brute_force(benchmark::State& state) {
  static const Catalog cat = generate_catalog({}, 3);
  std::uint64_t plans = 0;
  for (auto _ : state)
    for (const auto& q : six().queries) plans += Brute(cat, q).plans;
  state.SetItemsProcessed(static_cast<std::int64_t>(plans));
}

}  // namespace

BENCHMARK(BM_predict<kernels::serial::predict_batch>)->Name("predict_batch/serial")->Arg(64)->Arg(1024);
BENCHMARK(BM_predict<kernels::parallel::predict_batch>)->Name("predict_batch/parallel")->Arg(64)->Arg(1024);
BENCHMARK(BM_gradient<kernels::serial::weighted_gradient>)->Name("weighted_gradient/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_gradient<kernels::parallel::weighted_gradient>)->Name("weighted_gradient/parallel")->Arg(64)->Arg(512);
BENCHMARK(BM_brute_force<kernels::serial::brute_force_min_cost>)->Name("brute_force/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_brute_force<kernels::parallel::brute_force_min_cost>)->Name("brute_force/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

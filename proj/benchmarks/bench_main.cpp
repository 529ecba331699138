#include <benchmark/benchmark.h>

#include <cmath>

#include "actlab/attack.hpp"
#include "actlab/fits.hpp"
#include "actlab/model.hpp"

namespace {

using namespace actlab;

ModelConfig bench_config() {
  ModelConfig c;
  c.d = 32;
  c.vocab = 64;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_context = 128;
  return c;
}

template <typename T>
const Model<T>& bench_model() {
  static const Model<T> m(Weights<T>::initialize(bench_config(), 1));
  return m;
}

// Forward pass of the attack loss; range(0) = s + t.
template <typename T>
void BM_AttackLossForward(benchmark::State& state) {
  const auto& m = bench_model<T>();
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto s = sample_random_tokens(64, len / 2, 1);
  const auto t = sample_random_tokens(64, len - len / 2, 2);
  const auto p = Tensor<T>::matrix(1, 32, T(0.1));
  for (auto _ : state) benchmark::DoNotOptimize(attack_loss(m, s, t, p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AttackLossForward<float>)->RangeMultiplier(4)->Range(8, 128);
BENCHMARK(BM_AttackLossForward<double>)->RangeMultiplier(4)->Range(8, 128);

// Forward plus backward to the perturbation.
template <typename T>
void BM_AttackLossBackward(benchmark::State& state) {
  const auto& m = bench_model<T>();
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto s = sample_random_tokens(64, len / 2, 1);
  const auto t = sample_random_tokens(64, len - len / 2, 2);
  for (auto _ : state) {
    auto p = Tensor<T>::matrix(1, 32, T(0.1));
    p.set_requires_grad(true);
    Graph<T> g;
    const auto w = m.bind(g);
    g.backward(attack_loss(g, m, w, s, t, g.leaf(p)));
    benchmark::DoNotOptimize(p.grad()[0]);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AttackLossBackward<float>)->RangeMultiplier(4)->Range(8, 128);
BENCHMARK(BM_AttackLossBackward<double>)->RangeMultiplier(4)->Range(8, 128);

// Fixed 20 Adam steps against a random target of length range(0).
void BM_OptimizeAttack(benchmark::State& state) {
  const auto& m = bench_model<float>();
  AttackSpec spec;
  spec.a = 1;
  spec.s = 1;
  spec.t = static_cast<int>(state.range(0));
  spec.steps = 20;
  std::vector<AttackPair> pairs{{sample_random_tokens(64, 1, 3), sample_random_tokens(64, spec.t, 4)}};
  for (auto _ : state) benchmark::DoNotOptimize(optimize_attack(m, std::span<const AttackPair>(pairs), spec));
  state.SetItemsProcessed(state.iterations() * spec.steps);
}
BENCHMARK(BM_OptimizeAttack)->Arg(4)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GreedyTokenAttack(benchmark::State& state) {
  const auto& m = bench_model<float>();
  const auto s = sample_random_tokens(64, 8, 5);
  const auto t = sample_random_tokens(64, 4, 6);
  const int a = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(greedy_token_attack(m, s, t, a));
}
BENCHMARK(BM_GreedyTokenAttack)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_SigmoidFit(benchmark::State& state) {
  std::vector<FitPoint> pts;
  for (int i = 0; i < 12; ++i) {
    const double t = std::pow(400.0, i / 11.0);
    pts.push_back({t, 1.0 / (1.0 + std::pow(t / 20.0, 3.0)), 1});
  }
  for (auto _ : state) benchmark::DoNotOptimize(fit_sigmoid(pts));
}
BENCHMARK(BM_SigmoidFit);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "advq/attacks.hpp"
#include "advq/defense.hpp"
#include "advq/rng.hpp"

using namespace advq;

namespace {

Dataset bench_dataset(int n, uint64_t seed) {
  return normalize(gen_synth_digits(n, seed), Normalization::preset("mnist"));
}

void BM_pgd_batch(benchmark::State& state) {
  LayeredModel m = build_lenet(1);
  Dataset ds = bench_dataset(static_cast<int>(state.range(0)), 3);
  AttackConfig cfg;
  cfg.kind = AttackKind::kPgd;
  cfg.budget.epsilon = 0.3;
  cfg.budget.steps = 10;
  for (auto _ : state) {
    EvalRow row = evaluate_attack(m, ds, cfg);
    benchmark::DoNotOptimize(row.accuracy);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * cfg.budget.steps);
}
BENCHMARK(BM_pgd_batch)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_tiny_batch(benchmark::State& state) {
  LayeredModel m = build_lenet(1);
  Dataset ds = bench_dataset(static_cast<int>(state.range(0)), 4);
  AttackConfig cfg;
  cfg.kind = AttackKind::kTiny;
  cfg.budget.epsilon = 0.3;
  cfg.budget.steps = 10;
  cfg.budget.tap = 12;
  cfg.budget.restarts = 2;
  for (auto _ : state) {
    EvalRow row = evaluate_attack(m, ds, cfg);
    benchmark::DoNotOptimize(row.accuracy);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * cfg.budget.steps);
}
BENCHMARK(BM_tiny_batch)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_sign_quantize(benchmark::State& state) {
  Rng rng(5);
  Tensor f = Tensor::zeros({static_cast<int>(state.range(0))});
  for (auto& v : f.mutable_data()) v = rng.normal();
  for (auto _ : state) {
    Tensor q = apply_sign(f);
    benchmark::DoNotOptimize(q.data().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_sign_quantize)->Arg(1 << 16)->Arg(1 << 20);

void BM_checkpointless_predict(benchmark::State& state) {
  LayeredModel m = build_lenet(2);
  Dataset ds = bench_dataset(256, 6);
  for (auto _ : state) {
    auto preds = predict(m, ds.images);
    benchmark::DoNotOptimize(preds.data());
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_checkpointless_predict);

}  // namespace

#include <benchmark/benchmark.h>

#include "advq/model.hpp"
#include "advq/rng.hpp"
#include "advq/tensor.hpp"
#include "advq/threads.hpp"

using namespace advq;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-1, 1);
  return t;
}

void BM_gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Tensor a = random_tensor({n, n}, 1);
  Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Tensor c = matmul(nullptr, a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_conv2d_forward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  Tensor in = random_tensor({batch, 1, 28, 28}, 3);
  Tensor k = random_tensor({6, 1, 5, 5}, 4);
  for (auto _ : state) {
    Tensor out = conv2d(nullptr, in, k, 1, 2);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_conv2d_forward)->Arg(16)->Arg(64);

void BM_conv2d_backward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  Tensor in = random_tensor({batch, 1, 28, 28}, 5);
  Tensor k = random_tensor({6, 1, 5, 5}, 6);
  for (auto _ : state) {
    Tape tape;
    Tensor x = in.clone();
    Tensor kk = k.clone();
    tape.watch(x);
    tape.watch(kk);
    Tensor out = conv2d(&tape, x, kk, 1, 2);
    Tensor loss = sum(&tape, out);
    GradMap g = tape.backward(loss);
    benchmark::DoNotOptimize(g.at(x).data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_conv2d_backward)->Arg(16)->Arg(64);

void BM_lenet_forward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  LayeredModel m = build_lenet(1);
  Tensor in = random_tensor({batch, 1, 28, 28}, 7);
  for (auto _ : state) {
    Tensor z = forward_full(m, nullptr, in);
    benchmark::DoNotOptimize(z.data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_lenet_forward)->Arg(1)->Arg(64)->Arg(256);

void BM_lenet_train_step(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  LayeredModel m = build_lenet(2);
  Tensor in = random_tensor({batch, 1, 28, 28}, 8);
  std::vector<int> labels(batch);
  for (int i = 0; i < batch; ++i) labels[i] = i % 10;
  auto params = m.params();
  for (auto _ : state) {
    Tape tape;
    for (Tensor* p : params) tape.watch(*p);
    Tensor loss = softmax_cross_entropy(&tape, forward_full(m, &tape, in, true), labels);
    GradMap g = tape.backward(loss);
    benchmark::DoNotOptimize(g.at(*params[0]).data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_lenet_train_step)->Arg(64);

}  // namespace

BENCHMARK_MAIN();

// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "cvlm/ops.hpp"
#include "cvlm/rng.hpp"
#include "cvlm/tensor.hpp"

using namespace cvlm;
using namespace cvlm::ops;

namespace {

Tensor random_matrix(Rng& rng, int r, int c) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (double& x : v) x = rng.gaussian(0.0, 1.0);
  return Tensor::from_vector({r, c}, std::move(v));
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = random_matrix(rng, n, n);
  Tensor b = random_matrix(rng, n, n);
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(matmul(a, b).data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(96)->Arg(128)->Arg(256);

static void BM_MatmulTransposed(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor a = random_matrix(rng, n, n);
  Tensor b = random_matrix(rng, n, n);
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(matmul_nt(a, b).data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_MatmulTransposed)->Arg(96)->Arg(256);

static void BM_SoftmaxRows(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(3);
  Tensor x = random_matrix(rng, n, n);
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(softmax_rows(x).data());
  }
}
BENCHMARK(BM_SoftmaxRows)->Arg(64)->Arg(256);

static void BM_LayerNorm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(4);
  Tensor x = random_matrix(rng, n, n);
  Tensor gamma = Tensor::full({n}, 1.0);
  Tensor beta = Tensor::zeros({n});
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(layer_norm(x, gamma, beta).data());
  }
}
BENCHMARK(BM_LayerNorm)->Arg(96)->Arg(256);

static void BM_CausalAttention(benchmark::State& state) {
  const int seq = static_cast<int>(state.range(0));
  const int d = 64;
  Rng rng(5);
  Tensor q = random_matrix(rng, seq, d);
  Tensor k = random_matrix(rng, seq, d);
  Tensor v = random_matrix(rng, seq, d);
  Tensor mask = causal_mask(seq);
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(attention(q, k, v, mask).data());
  }
}
BENCHMARK(BM_CausalAttention)->Arg(32)->Arg(64)->Arg(128);

static void BM_ForwardBackwardMlp(benchmark::State& state) {
  // One training-shaped unit: linear + gelu + linear + softmax CE, then the
  // full reverse sweep.
  const int batch = 32, d = 96, vocab = 64;
  Rng rng(6);
  Tensor x = random_matrix(rng, batch, d);
  Tensor w1 = random_matrix(rng, 4 * d, d);
  Tensor b1 = Tensor::zeros({4 * d});
  Tensor w2 = random_matrix(rng, vocab, 4 * d);
  Tensor b2 = Tensor::zeros({vocab});
  for (Tensor* t : {&w1, &b1, &w2, &b2}) {
    t->node->requires_grad = true;
  }
  std::vector<int> targets(batch);
  for (int i = 0; i < batch; ++i) targets[i] = i % vocab;
  for (auto _ : state) {
    Tensor h = gelu(linear(x, w1, b1));
    Tensor loss = cross_entropy(linear(h, w2, b2), targets, -1,
                                Reduction::kMean);
    backward(loss);
    benchmark::DoNotOptimize(w1.node->grad.data());
    for (Tensor* t : {&w1, &b1, &w2, &b2}) t->node->grad.clear();
  }
}
BENCHMARK(BM_ForwardBackwardMlp);

BENCHMARK_MAIN();

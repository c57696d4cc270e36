// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "cvlm/bundle.hpp"
#include "cvlm/data.hpp"
#include "cvlm/ops.hpp"

using namespace cvlm;

namespace {

// Desk-scale stack shared by every benchmark in this file.
struct Stack {
  World world;
  Tokenizer tok;
  std::vector<KnowledgePair> pairs;
  InstructionSplits splits;
  ModelBundle bundle;

  static BundleConfig config(const Tokenizer& tok) {
    RunConfig rc;
    rc.seed = 1234;
    rc.vka.d_k = 64;
    rc.vka.n_blocks = 2;
    rc.vka.ffn_mult = 2;
    rc.fka.n_layers = 1;
    rc.fka.per_layer_len = 2;
    rc.fka.ffn_mult = 2;
    rc.hostlm.d_l = 96;
    rc.hostlm.n_layers = 2;
    rc.hostlm.n_heads = 4;
    rc.hostlm.max_seq_len = 64;
    rc.hostlm.ffn_mult = 2;
    return make_bundle_config(rc, tok.vocab_size(),
                              tok.knowledge_prompt_ids());
  }

  Stack()
      : world(gen_world(1234, WorldConfig{})),
        tok(Tokenizer::build(world)),
        pairs(make_knowledge_pairs(world, 2, 7)),
        splits(make_instruction_set(world, 11, 2)),
        bundle(config(tok)) {}
};

Stack& stack() {
  static Stack s;
  return s;
}

}  // namespace

static void BM_VisionEncode(benchmark::State& state) {
  Stack& s = stack();
  const ImageGrid& img = s.pairs[0].image;
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(s.bundle.vision().encode(img).data());
  }
}
BENCHMARK(BM_VisionEncode);

static void BM_KnowledgeEncode(benchmark::State& state) {
  Stack& s = stack();
  const ImageGrid& img = s.pairs[0].image;
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(s.bundle.vka().encode_knowledge(img).data());
  }
}
BENCHMARK(BM_KnowledgeEncode);

static void BM_ProbeLogits(benchmark::State& state) {
  Stack& s = stack();
  const InstructionSample& sample = s.splits.train[0];
  const std::vector<int> text = s.tok.tokenize(sample.question);
  for (auto _ : state) {
    NoGrad ng;
    benchmark::DoNotOptimize(
        s.bundle.probe_logits(sample.image, text, true, true, true).data());
  }
}
BENCHMARK(BM_ProbeLogits);

static void BM_InstructionStep(benchmark::State& state) {
  // Loss + full backward over one batch: the stage-3 unit of work.
  const int batch_size = static_cast<int>(state.range(0));
  Stack& s = stack();
  s.bundle.params().set_trainable_all(true);
  std::vector<const InstructionSample*> batch;
  for (int i = 0; i < batch_size; ++i) {
    batch.push_back(&s.splits.train[static_cast<std::size_t>(i) %
                                    s.splits.train.size()]);
  }
  for (auto _ : state) {
    Tensor loss = s.bundle.instruction_loss(batch, s.tok, Reduction::kMean);
    backward(loss);
    benchmark::DoNotOptimize(loss.value());
    for (const Parameter& p : s.bundle.params().all()) {
      if (p.tensor.node) p.tensor.node->grad.clear();
    }
  }
}
BENCHMARK(BM_InstructionStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_GenerateAnswer(benchmark::State& state) {
  Stack& s = stack();
  const InstructionSample& sample = s.splits.train[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        s.bundle.generate_answer(sample.image, sample.question, s.tok, 8));
  }
}
BENCHMARK(BM_GenerateAnswer)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

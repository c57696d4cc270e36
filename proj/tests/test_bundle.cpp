// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"

#include "cvlm/bundle.hpp"
#include "cvlm/data.hpp"

using namespace cvlm;

namespace {

struct Fixture {
  World world;
  Tokenizer tok;
  BundleConfig cfg;
  std::vector<KnowledgePair> pairs;
  InstructionSplits splits;

  explicit Fixture(std::uint64_t seed = 6) {
    world = gen_world(seed, WorldConfig{8, 8, 8, 6, 16});
    tok = Tokenizer::build(world);
    pairs = make_knowledge_pairs(world, 2, 7);
    splits = make_instruction_set(world, 11, 1);
    cfg.seed = seed;
    cfg.vision = VisionConfig{32, 32, 3, 8, 16};
    cfg.vka.d_k = 32;
    cfg.vka.n_blocks = 2;
    cfg.vka.n_heads = 4;
    cfg.vka.vocab_size = tok.vocab_size();
    cfg.vka.n_query_tokens = 4;
    cfg.vka.prompt_token_ids = tok.knowledge_prompt_ids();
    cfg.vka.max_seq_len = 48;
    cfg.vka.ffn_mult = 2;
    cfg.vka.d_v = 16;
    cfg.vka.d_l = 32;
    cfg.fka.n_layers = 1;
    cfg.fka.n_heads = 2;
    cfg.fka.per_layer_len = 2;
    cfg.fka.n_host_layers = 2;
    cfg.fka.d_l = 32;
    cfg.fka.ffn_mult = 2;
    cfg.host.d_l = 32;
    cfg.host.n_layers = 2;
    cfg.host.n_heads = 2;
    cfg.host.vocab_size = tok.vocab_size();
    cfg.host.max_seq_len = 64;
    cfg.host.ffn_mult = 2;
    cfg.host.lora_rank = 2;
    cfg.host.lora_alpha = 4;
  }

  std::vector<const KnowledgePair*> pair_batch(int n) const {
    std::vector<const KnowledgePair*> b;
    for (int i = 0; i < n; ++i) b.push_back(&pairs[std::size_t(i)]);
    return b;
  }
  std::vector<const InstructionSample*> instr_batch(int n) const {
    std::vector<const InstructionSample*> b;
    for (int i = 0; i < n; ++i) b.push_back(&splits.train[std::size_t(i)]);
    return b;
  }
};

}  // namespace

TEST_CASE("bundle validation cross-checks module widths") {
  Fixture f;
  CHECK_NOTHROW(ModelBundle{f.cfg});
  BundleConfig bad = f.cfg;
  bad.vka.d_l = 48;  // host expects 32
  CHECK_THROWS_AS(ModelBundle{bad}, ConfigError);
  bad = f.cfg;
  bad.vka.d_v = 24;  // vision emits 16
  CHECK_THROWS_AS(ModelBundle{bad}, ConfigError);
  bad = f.cfg;
  bad.fka.n_host_layers = 3;  // host has 2
  CHECK_THROWS_AS(ModelBundle{bad}, ConfigError);
  bad = f.cfg;
  bad.fka.d_l = 64;
  CHECK_THROWS_AS(ModelBundle{bad}, ConfigError);
}

TEST_CASE("fka construction is gated by the distill count") {
  Fixture f;
  ModelBundle full(f.cfg);
  CHECK(full.has_fka());
  BundleConfig no_fka = f.cfg;
  no_fka.with_fka = false;
  CHECK_FALSE(ModelBundle{no_fka}.has_fka());
  BundleConfig ld0 = f.cfg;
  ld0.fka.per_layer_len = 0;
  CHECK_FALSE(ModelBundle{ld0}.has_fka());
}

TEST_CASE("every initial loss sits near uniform-vocabulary entropy") {
  Fixture f;
  ModelBundle m(f.cfg);
  const double uniform = std::log(double(f.tok.vocab_size()));
  Tensor l1 = m.vka_pretrain_loss(f.pair_batch(3), f.tok, Reduction::kMean);
  CHECK(std::abs(l1.value() - uniform) < 0.3);
  Tensor l2 = m.vka_align_loss(f.pair_batch(3), f.tok, Reduction::kMean);
  CHECK(std::abs(l2.value() - uniform) < 0.3);
  Tensor l3 = m.instruction_loss(f.instr_batch(3), f.tok, Reduction::kMean);
  CHECK(std::abs(l3.value() - uniform) < 0.3);
  Tensor l4 = m.caption_loss(f.pair_batch(3), f.tok, Reduction::kMean);
  CHECK(std::abs(l4.value() - uniform) < 0.3);
}

TEST_CASE("mean reduction equals sum divided by predicted tokens") {
  Fixture f;
  ModelBundle m(f.cfg);
  auto batch = f.instr_batch(4);
  int tokens = 0;
  for (const InstructionSample* s : batch) {
    tokens += int(f.tok.tokenize(s->answer).size()) + 1;  // + EOS
  }
  Tensor mean = m.instruction_loss(batch, f.tok, Reduction::kMean);
  Tensor sum = m.instruction_loss(batch, f.tok, Reduction::kSum);
  CHECK(mean.value() ==
        doctest::Approx(sum.value() / tokens).epsilon(1e-12));
}

TEST_CASE("empty batches are rejected") {
  Fixture f;
  ModelBundle m(f.cfg);
  CHECK_THROWS_AS(m.vka_pretrain_loss({}, f.tok, Reduction::kMean),
                  DegenerateBatchError);
  CHECK_THROWS_AS(m.instruction_loss({}, f.tok, Reduction::kMean),
                  DegenerateBatchError);
}

TEST_CASE("frozen-vision cache is keyed by image identity") {
  Fixture f;
  ModelBundle m(f.cfg);
  CHECK(m.image_cache_size() == 0);
  m.instruction_loss(f.instr_batch(2), f.tok, Reduction::kMean);
  CHECK(m.image_cache_size() == 2);
  m.instruction_loss(f.instr_batch(2), f.tok, Reduction::kMean);
  CHECK(m.image_cache_size() == 2);  // same images, no growth
  m.clear_image_cache();
  CHECK(m.image_cache_size() == 0);
}

TEST_CASE("losses are reproducible across identically seeded bundles") {
  Fixture f;
  ModelBundle a(f.cfg), b(f.cfg);
  Tensor la = a.instruction_loss(f.instr_batch(3), f.tok, Reduction::kMean);
  Tensor lb = b.instruction_loss(f.instr_batch(3), f.tok, Reduction::kMean);
  CHECK(la.value() == lb.value());
}

TEST_CASE("generate_answer is deterministic and in-vocabulary") {
  Fixture f;
  ModelBundle m(f.cfg);
  const InstructionSample& s = f.splits.train[0];
  std::string a = m.generate_answer(s.image, s.question, f.tok, 6);
  std::string b = m.generate_answer(s.image, s.question, f.tok, 6);
  CHECK(a == b);
  if (!a.empty()) CHECK_NOTHROW(f.tok.tokenize(a));
}

TEST_CASE("probe_logits toggles reduce to the plain host") {
  Fixture f;
  ModelBundle m(f.cfg);
  const ImageGrid& img = f.splits.train[0].image;
  std::vector<int> text = {Tokenizer::kBos, Tokenizer::kSep, Tokenizer::kEos};
  Tensor all_on = m.probe_logits(img, text, true, true, true);
  Tensor all_off = m.probe_logits(img, text, false, false, false);
  CHECK(all_on.rows() == all_off.rows());
  bool moved = false;
  for (std::size_t i = 0; i < all_on.numel(); ++i) {
    moved = moved || all_on.data()[i] != all_off.data()[i];
  }
  CHECK(moved);  // image tokens alone separate the two
}

TEST_CASE("probe toggles act independently") {
  Fixture f;
  ModelBundle m(f.cfg);
  const ImageGrid& img = f.splits.train[0].image;
  std::vector<int> text = {Tokenizer::kBos, Tokenizer::kSep, Tokenizer::kEos};
  Tensor base = m.probe_logits(img, text, false, false, false);
  auto differs = [&](const Tensor& t) {
    bool moved = false;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      moved = moved || t.data()[i] != base.data()[i];
    }
    return moved;
  };
  // Knowledge tokens enter the prompt even while cross-attention is still
  // zero-initialized; injection slices add rows to every layer.
  CHECK(differs(m.probe_logits(img, text, true, false, false)));
  CHECK(differs(m.probe_logits(img, text, false, true, false)));
}

TEST_CASE("instruction loss sees gradients in every trainable group") {
  Fixture f;
  ModelBundle m(f.cfg);
  Tensor loss = m.instruction_loss(f.instr_batch(2), f.tok, Reduction::kMean);
  backward(loss);
  bool vka_grad = false, host_grad = false;
  for (Parameter& p : m.params().all()) {
    if (!p.tensor.node || p.tensor.node->grad.empty()) continue;
    double g = 0.0;
    for (double v : p.tensor.node->grad) g += std::abs(v);
    if (g > 0) {
      if (p.name.rfind("vka.", 0) == 0) vka_grad = true;
      if (p.name.rfind("hostlm.", 0) == 0) host_grad = true;
    }
  }
  CHECK(vka_grad);
  CHECK(host_grad);
}

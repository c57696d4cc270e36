// SPDX-License-Identifier: Apache-2.0
#include "cvlm/gradcheck.hpp"

#include <cmath>

#include "cvlm/bundle.hpp"
#include "cvlm/ops.hpp"
#include "cvlm/training.hpp"

namespace cvlm {

namespace {

void zero_grads(ParamStore& store) {
  for (auto& p : store.all()) {
    auto& node = *p.tensor.node;
    node.ensure_grad();
    node.grad.assign(node.grad.size(), 0.0);
  }
}

// Fixed-weight scalarization: sum(y * weights). Constant weights keep every
// output element visible to the check.
Tensor weighted_sum(const Tensor& y, const Tensor& weights) {
  Tensor prod = ops::mul(y, weights);
  Tensor ones_col = Tensor::full({prod.cols(), 1}, 1.0);
  Tensor row_sums = ops::matmul(prod, ones_col);
  Tensor ones_row = Tensor::full({1, prod.rows()}, 1.0);
  return ops::matmul(ones_row, row_sums);
}

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double scale = 0.5) {
  Tensor t = Tensor::zeros(std::move(shape));
  double* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) p[i] = rng.gaussian() * scale;
  return t;
}

}  // namespace

GradCheckResult gradcheck(ParamStore& store,
                          const std::function<Tensor()>& fn, double h) {
  zero_grads(store);
  Tensor loss = fn();
  backward(loss);
  struct Snap {
    Parameter* param;
    std::vector<double> grad;
  };
  std::vector<Snap> snaps;
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    std::vector<double> g(p.tensor.numel(), 0.0);
    const auto& node_grad = p.tensor.node->grad;
    for (std::size_t i = 0; i < node_grad.size() && i < g.size(); ++i) {
      g[i] = node_grad[i];
    }
    snaps.push_back(Snap{&p, std::move(g)});
  }
  GradCheckResult res;
  NoGrad ng;
  for (Snap& s : snaps) {
    double* w = s.param->tensor.data();
    for (std::size_t i = 0; i < s.grad.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double up = fn().value();
      w[i] = orig - h;
      const double down = fn().value();
      w[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double a = s.grad[i];
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-5});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = s.param->name;
        res.worst_analytic = a;
        res.worst_fd = fd;
      }
      ++res.n_checked;
    }
  }
  zero_grads(store);
  return res;
}

namespace {

ModuleCheck check_linear(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor w = store.add("w", rand_tensor(rng, {5, 4}), Group::kVka).tensor;
  Tensor b = store.add("b", rand_tensor(rng, {5}), Group::kVka).tensor;
  const Tensor x = rand_tensor(rng, {3, 4});
  const Tensor c = rand_tensor(rng, {3, 5}, 1.0);
  auto fn = [=]() { return weighted_sum(ops::linear(x, w, b), c); };
  return {"linear", gradcheck(store, fn)};
}

ModuleCheck check_gelu(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor x = store.add("x", rand_tensor(rng, {4, 6}, 1.5), Group::kVka).tensor;
  const Tensor c = rand_tensor(rng, {4, 6}, 1.0);
  auto fn = [=]() { return weighted_sum(ops::gelu(x), c); };
  return {"gelu", gradcheck(store, fn)};
}

ModuleCheck check_softmax(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor x = store.add("x", rand_tensor(rng, {4, 7}, 1.5), Group::kVka).tensor;
  const Tensor c = rand_tensor(rng, {4, 7}, 1.0);
  auto fn = [=]() { return weighted_sum(ops::softmax_rows(x), c); };
  return {"softmax", gradcheck(store, fn)};
}

ModuleCheck check_layer_norm(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor x = store.add("x", rand_tensor(rng, {3, 8}, 1.2), Group::kVka).tensor;
  Tensor gamma =
      store.add("gamma", rand_tensor(rng, {8}, 0.7), Group::kVka).tensor;
  Tensor beta =
      store.add("beta", rand_tensor(rng, {8}, 0.3), Group::kVka).tensor;
  const Tensor c = rand_tensor(rng, {3, 8}, 1.0);
  auto fn = [=]() { return weighted_sum(ops::layer_norm(x, gamma, beta), c); };
  return {"layer_norm", gradcheck(store, fn)};
}

ModuleCheck check_attention(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor q = store.add("q", rand_tensor(rng, {5, 6}), Group::kVka).tensor;
  Tensor k = store.add("k", rand_tensor(rng, {5, 6}), Group::kVka).tensor;
  Tensor v = store.add("v", rand_tensor(rng, {5, 6}), Group::kVka).tensor;
  const Tensor mask = ops::causal_mask(5);
  const Tensor c = rand_tensor(rng, {5, 6}, 1.0);
  auto fn = [=]() { return weighted_sum(ops::attention(q, k, v, mask), c); };
  return {"attention_masked", gradcheck(store, fn)};
}

ModuleCheck check_mha(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  MultiHeadAttention mha;
  mha.init(store, "attn", 8, 2, Group::kVka, rng);
  const Tensor x = rand_tensor(rng, {5, 8});
  const Tensor mask = ops::causal_mask(5);
  const Tensor c = rand_tensor(rng, {5, 8}, 1.0);
  auto fn = [&mha, x, mask, c]() {
    return weighted_sum(mha.forward(x, x, mask), c);
  };
  return {"multi_head_attention", gradcheck(store, fn)};
}

ModuleCheck check_cross_mha(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  MultiHeadAttention mha;
  mha.init(store, "cross", 8, 2, Group::kVka, rng, false, 6);
  const Tensor x = rand_tensor(rng, {4, 8});
  const Tensor kv = rand_tensor(rng, {7, 6});
  const Tensor c = rand_tensor(rng, {4, 8}, 1.0);
  auto fn = [&mha, x, kv, c]() {
    return weighted_sum(mha.forward(x, kv, Tensor()), c);
  };
  return {"cross_attention", gradcheck(store, fn)};
}

ModuleCheck check_ffn(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  FeedForward ffn;
  ffn.init(store, "ffn", 6, 2, Group::kVka, rng);
  const Tensor x = rand_tensor(rng, {4, 6});
  const Tensor c = rand_tensor(rng, {4, 6}, 1.0);
  auto fn = [&ffn, x, c]() { return weighted_sum(ffn.forward(x), c); };
  return {"feed_forward", gradcheck(store, fn)};
}

ModuleCheck check_cross_entropy(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor logits =
      store.add("logits", rand_tensor(rng, {6, 9}, 1.5), Group::kVka).tensor;
  const std::vector<int> targets = {1, 4, -1, 0, 8, 2};
  auto fn = [=]() {
    return ops::cross_entropy(logits, targets, -1, Reduction::kMean);
  };
  return {"cross_entropy", gradcheck(store, fn)};
}

ModuleCheck check_embedding(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor table =
      store.add("table", rand_tensor(rng, {10, 5}), Group::kVka).tensor;
  const std::vector<int> ids = {3, 1, 3, 9, 0};
  const Tensor c = rand_tensor(rng, {5, 5}, 1.0);
  auto fn = [=]() { return weighted_sum(ops::embed_rows(table, ids), c); };
  return {"embedding", gradcheck(store, fn)};
}

ModuleCheck check_lora(std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  Tensor w = store.add("w", rand_tensor(rng, {6, 6}), Group::kHostLm).tensor;
  LoraPair pair;
  pair.a = store.add("a", rand_tensor(rng, {2, 6}), Group::kLora).tensor;
  pair.b = store.add("b", rand_tensor(rng, {6, 2}), Group::kLora).tensor;
  pair.rank = 2;
  pair.alpha = 4;
  store.set_trainable("w", false);
  const Tensor x = rand_tensor(rng, {4, 6});
  const Tensor c = rand_tensor(rng, {4, 6}, 1.0);
  auto fn = [=]() {
    Tensor eff = lora_apply(w, pair);
    return weighted_sum(ops::matmul(x, eff), c);
  };
  return {"lora_adapter", gradcheck(store, fn)};
}

BundleConfig tiny_pipeline_config(const Tokenizer& tok, std::uint64_t seed) {
  BundleConfig bc;
  bc.seed = seed;
  bc.vision = VisionConfig{32, 32, 3, 8, 8};
  bc.vka.d_k = 16;
  bc.vka.n_blocks = 1;
  bc.vka.n_heads = 2;
  bc.vka.vocab_size = tok.vocab_size();
  bc.vka.n_query_tokens = 4;
  bc.vka.prompt_token_ids = tok.knowledge_prompt_ids();
  bc.vka.max_seq_len = 32;
  bc.vka.ffn_mult = 2;
  bc.vka.d_v = 8;
  bc.vka.d_l = 32;
  bc.fka.n_layers = 1;
  bc.fka.n_heads = 2;
  bc.fka.per_layer_len = 2;
  bc.fka.n_host_layers = 2;
  bc.fka.d_l = 32;
  bc.fka.ffn_mult = 1;
  bc.host.d_l = 32;
  bc.host.n_layers = 2;
  bc.host.n_heads = 2;
  bc.host.vocab_size = tok.vocab_size();
  bc.host.max_seq_len = 48;
  bc.host.ffn_mult = 1;
  bc.host.lora_rank = 2;
  bc.host.lora_alpha = 4;
  return bc;
}

ModuleCheck check_full_pipeline(std::uint64_t seed) {
  WorldConfig wc;
  wc.n_entities = 4;
  const World world = gen_world(seed, wc);
  const Tokenizer tok = Tokenizer::build(world);
  const InstructionSplits splits = make_instruction_set(world, seed + 1, 1);
  ModelBundle bundle(tiny_pipeline_config(tok, seed));
  // Check at a generic point: fresh-init weights leave attention softmaxes
  // near-uniform and the LoRA up-projections exactly zero, which zeroes the
  // very gradients the check should exercise.
  Rng prng(mix_seed(seed, hash_str("perturb")));
  for (auto& p : bundle.params().all()) {
    double* w = p.tensor.data();
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) {
      w[i] += prng.gaussian() * 0.1;
    }
  }
  apply_stage_trainability(Stage::kInstructionTune, bundle.params());
  const std::vector<const InstructionSample*> batch = {&splits.train[0],
                                                       &splits.train[1]};
  auto fn = [&bundle, &tok, batch]() {
    return bundle.instruction_loss(batch, tok, Reduction::kMean);
  };
  return {"full_pipeline_step", gradcheck(bundle.params(), fn)};
}

}  // namespace

std::vector<ModuleCheck> gradcheck_suite(std::uint64_t seed) {
  std::vector<ModuleCheck> checks;
  checks.push_back(check_linear(mix_seed(seed, 1)));
  checks.push_back(check_gelu(mix_seed(seed, 2)));
  checks.push_back(check_softmax(mix_seed(seed, 3)));
  checks.push_back(check_layer_norm(mix_seed(seed, 4)));
  checks.push_back(check_attention(mix_seed(seed, 5)));
  checks.push_back(check_mha(mix_seed(seed, 6)));
  checks.push_back(check_cross_mha(mix_seed(seed, 7)));
  checks.push_back(check_ffn(mix_seed(seed, 8)));
  checks.push_back(check_cross_entropy(mix_seed(seed, 9)));
  checks.push_back(check_embedding(mix_seed(seed, 10)));
  checks.push_back(check_lora(mix_seed(seed, 11)));
  checks.push_back(check_full_pipeline(mix_seed(seed, 12)));
  return checks;
}

double gradcheck_suite_max(const std::vector<ModuleCheck>& checks) {
  double m = 0.0;
  for (const auto& c : checks) m = std::max(m, c.result.max_rel_err);
  return m;
}

}  // namespace cvlm

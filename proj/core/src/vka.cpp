// SPDX-License-Identifier: Apache-2.0
#include "cvlm/vka.hpp"

#include <algorithm>

#include "cvlm/ops.hpp"

namespace cvlm {

void VkaConfig::validate(int bos_id) const {
  if (d_k <= 0 || n_heads <= 0 || d_k % n_heads != 0) {
    throw ConfigError("vka: hidden dim " + std::to_string(d_k) +
                      " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
  if (n_query_tokens < 1) throw ConfigError("vka: need at least one query token");
  if (n_blocks < 1) throw ConfigError("vka: need at least one block");
  if (vocab_size <= 0) throw ConfigError("vka: vocab_size unset");
  if (prompt_token_ids.empty() || prompt_token_ids.front() != bos_id) {
    throw ConfigError("vka: knowledge prompt must begin with BOS");
  }
  if (static_cast<int>(prompt_token_ids.size()) + n_query_tokens >
      max_seq_len) {
    throw ConfigError("vka: prompt plus query tokens exceed max_seq_len");
  }
}

void VkaBlock::init(ParamStore& store, const std::string& prefix,
                    const VkaConfig& cfg, Rng& rng) {
  ln1.init(store, prefix + ".ln1", cfg.d_k, Group::kVka);
  self_attn.init(store, prefix + ".self", cfg.d_k, cfg.n_heads, Group::kVka,
                 rng);
  ln2.init(store, prefix + ".ln2", cfg.d_k, Group::kVka);
  cross_attn.init(store, prefix + ".cross", cfg.d_k, cfg.n_heads, Group::kVka,
                  rng, /*zero_out_proj=*/true, /*d_kv=*/cfg.d_v);
  ln3.init(store, prefix + ".ln3", cfg.d_k, Group::kVka);
  ffn.init(store, prefix + ".ffn", cfg.d_k, cfg.ffn_mult, Group::kVka, rng);
}

Tensor VkaBlock::forward(const Tensor& x, const Tensor& image_seq,
                         const Tensor& mask) const {
  Tensor a = ln1.forward(x);
  Tensor h = ops::add(x, self_attn.forward(a, a, mask));
  h = ops::add(h, cross_attn.forward(ln2.forward(h), image_seq, Tensor{}));
  return ops::add(h, ffn.forward(ln3.forward(h)));
}

Vka::Vka(const VkaConfig& cfg, ParamStore& store, Rng& rng, int bos_id)
    : cfg_(cfg) {
  cfg_.validate(bos_id);
  tok_emb_ = store
                 .add("vka.tok_emb",
                      gaussian_init(rng, {cfg.vocab_size, cfg.d_k}),
                      Group::kVka)
                 .tensor;
  pos_emb_ = store
                 .add("vka.pos_emb",
                      gaussian_init(rng, {cfg.max_seq_len, cfg.d_k}),
                      Group::kVka)
                 .tensor;
  blocks_.resize(static_cast<std::size_t>(cfg.n_blocks));
  for (int i = 0; i < cfg.n_blocks; ++i) {
    blocks_[static_cast<std::size_t>(i)].init(
        store, "vka.block" + std::to_string(i), cfg_, rng);
  }
  ln_f_.init(store, "vka.ln_f", cfg.d_k, Group::kVka);
  head_w_ = store
                .add("vka.head.w", gaussian_init(rng, {cfg.vocab_size, cfg.d_k}),
                     Group::kVka)
                .tensor;
  head_b_ = store.add("vka.head.b", Tensor::zeros({cfg.vocab_size}),
                      Group::kVka)
                .tensor;
  queries_ = store
                 .add("vka.queries",
                      gaussian_init(rng, {cfg.n_query_tokens, cfg.d_k}),
                      Group::kVka)
                 .tensor;
  proj_w_ = store
                .add("vka.proj.w", gaussian_init(rng, {cfg.d_l, cfg.d_k}),
                     Group::kVka)
                .tensor;
  proj_b_ = store.add("vka.proj.b", Tensor::zeros({cfg.d_l}), Group::kVka)
                .tensor;
}

Tensor Vka::embed_tokens(const std::vector<int>& ids) const {
  const int l = static_cast<int>(ids.size());
  if (l > cfg_.max_seq_len) {
    throw TruncationError("vka: sequence of " + std::to_string(l) +
                          " tokens exceeds max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
  }
  Tensor e = ops::embed_rows(tok_emb_, ids);
  return ops::add(e, ops::slice_rows(pos_emb_, 0, l));
}

Tensor Vka::backbone(const Tensor& x, const Tensor& image_seq,
                     const Tensor& mask) const {
  Tensor h = x;
  for (const auto& b : blocks_) h = b.forward(h, image_seq, mask);
  return ln_f_.forward(h);
}

Tensor Vka::pretrain_logits(const PatchSequence& image,
                            const std::vector<int>& prompt_ids,
                            const std::vector<int>& target_ids) const {
  if (prompt_ids.empty()) throw ConfigError("vka: empty prompt");
  if (target_ids.empty()) throw ConfigError("vka: empty target");
  std::vector<int> ids = prompt_ids;
  ids.insert(ids.end(), target_ids.begin(), target_ids.end());
  const int l = static_cast<int>(ids.size());
  const int p = static_cast<int>(prompt_ids.size());
  Tensor h = backbone(embed_tokens(ids), image.full(), ops::causal_mask(l));
  Tensor predict_rows = ops::slice_rows(h, p - 1, l - 1);
  return ops::linear(predict_rows, head_w_, head_b_);
}

Tensor Vka::encode_knowledge(const PatchSequence& image) const {
  const int p = static_cast<int>(cfg_.prompt_token_ids.size());
  const int n = cfg_.n_query_tokens;
  Tensor prompt_emb = ops::embed_rows(tok_emb_, cfg_.prompt_token_ids);
  Tensor x = ops::concat_rows({prompt_emb, queries_});
  x = ops::add(x, ops::slice_rows(pos_emb_, 0, p + n));
  Tensor h = backbone(x, image.full(), ops::causal_mask(p + n));
  Tensor h_ao = ops::slice_rows(h, p, p + n);
  return ops::linear(h_ao, proj_w_, proj_b_);
}

std::vector<int> Vka::generate(const PatchSequence& image, int max_new_tokens,
                               int eos_id) const {
  NoGrad ng;
  std::vector<int> ids = cfg_.prompt_token_ids;
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_new_tokens &&
         static_cast<int>(ids.size()) < cfg_.max_seq_len) {
    const int l = static_cast<int>(ids.size());
    Tensor h = backbone(embed_tokens(ids), image.full(), ops::causal_mask(l));
    Tensor logits = ops::linear(ops::slice_rows(h, l - 1, l), head_w_, head_b_);
    const double* row = logits.data();
    int best = 0;
    for (int v = 1; v < cfg_.vocab_size; ++v) {
      if (row[v] > row[best]) best = v;
    }
    if (best == eos_id) break;
    out.push_back(best);
    ids.push_back(best);
  }
  return out;
}

}  // namespace cvlm

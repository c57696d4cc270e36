// SPDX-License-Identifier: Apache-2.0
#include "cvlm/hostlm.hpp"

#include "cvlm/ops.hpp"

namespace cvlm {

void HostLmConfig::validate() const {
  if (d_l <= 0 || n_heads <= 0 || d_l % n_heads != 0) {
    throw ConfigError("hostlm: width " + std::to_string(d_l) +
                      " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
  if (n_layers < 1) throw ConfigError("hostlm: need at least one layer");
  if (vocab_size <= 0) throw ConfigError("hostlm: vocab_size unset");
  if (lora_rank < 0) throw ConfigError("hostlm: negative LoRA rank");
  if (lora_rank > d_l) {
    throw ConfigError("hostlm: LoRA rank " + std::to_string(lora_rank) +
                      " exceeds matrix dim " + std::to_string(d_l));
  }
}

Tensor lora_apply(const Tensor& base_w, const LoraPair& adapter) {
  if (!adapter.enabled()) return base_w;
  if (adapter.b.rows() != base_w.rows() || adapter.a.cols() != base_w.cols()) {
    throw ConfigError("lora: adapter " + adapter.b.shape_str() + "x" +
                      adapter.a.shape_str() + " does not fit base " +
                      base_w.shape_str());
  }
  const double s = adapter.alpha / static_cast<double>(adapter.rank);
  return ops::add(base_w, ops::scale(ops::matmul(adapter.b, adapter.a), s));
}

void lora_merge(Tensor& base_w, const LoraPair& adapter) {
  if (!adapter.enabled()) return;
  NoGrad ng;
  Tensor merged = lora_apply(base_w, adapter);
  double* dst = base_w.data();
  const double* src = merged.data();
  for (std::size_t i = 0; i < base_w.numel(); ++i) dst[i] = src[i];
}

void VisualMlp::init(ParamStore& store, int d_v, int d_l, Rng& rng) {
  w1 = store.add("mlp.w1", gaussian_init(rng, {d_l, d_v}), Group::kMlp).tensor;
  b1 = store.add("mlp.b1", Tensor::zeros({d_l}), Group::kMlp).tensor;
  w2 = store.add("mlp.w2", gaussian_init(rng, {d_l, d_l}), Group::kMlp).tensor;
  b2 = store.add("mlp.b2", Tensor::zeros({d_l}), Group::kMlp).tensor;
}

Tensor VisualMlp::forward(const Tensor& patches) const {
  return ops::linear(ops::gelu(ops::linear(patches, w1, b1)), w2, b2);
}

HostLm::HostLm(const HostLmConfig& cfg, ParamStore& store, Rng& rng,
               Rng& lora_rng, bool with_lora)
    : cfg_(cfg) {
  cfg_.validate();
  tok_emb_ = store
                 .add("hostlm.tok_emb",
                      gaussian_init(rng, {cfg.vocab_size, cfg.d_l}),
                      Group::kHostLm)
                 .tensor;
  pos_emb_ = store
                 .add("hostlm.pos_emb",
                      gaussian_init(rng, {cfg.max_seq_len, cfg.d_l}),
                      Group::kHostLm)
                 .tensor;
  blocks_.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int i = 0; i < cfg.n_layers; ++i) {
    auto& b = blocks_[static_cast<std::size_t>(i)];
    const std::string prefix = "hostlm.layer" + std::to_string(i);
    b.ln1.init(store, prefix + ".ln1", cfg.d_l, Group::kHostLm);
    b.attn.init(store, prefix + ".attn", cfg.d_l, cfg.n_heads, Group::kHostLm,
                rng);
    b.ln2.init(store, prefix + ".ln2", cfg.d_l, Group::kHostLm);
    b.ffn.init(store, prefix + ".ffn", cfg.d_l, cfg.ffn_mult, Group::kHostLm,
               rng);
    if (with_lora && cfg.lora_rank > 0) {
      const std::string lp = "lora.layer" + std::to_string(i);
      b.lora_q.a = store
                       .add(lp + ".q.a",
                            gaussian_init(lora_rng, {cfg.lora_rank, cfg.d_l}),
                            Group::kLora)
                       .tensor;
      b.lora_q.b = store
                       .add(lp + ".q.b",
                            Tensor::zeros({cfg.d_l, cfg.lora_rank}),
                            Group::kLora)
                       .tensor;
      b.lora_q.rank = cfg.lora_rank;
      b.lora_q.alpha = cfg.lora_alpha;
      b.lora_v.a = store
                       .add(lp + ".v.a",
                            gaussian_init(lora_rng, {cfg.lora_rank, cfg.d_l}),
                            Group::kLora)
                       .tensor;
      b.lora_v.b = store
                       .add(lp + ".v.b",
                            Tensor::zeros({cfg.d_l, cfg.lora_rank}),
                            Group::kLora)
                       .tensor;
      b.lora_v.rank = cfg.lora_rank;
      b.lora_v.alpha = cfg.lora_alpha;
    }
  }
  ln_f_.init(store, "hostlm.ln_f", cfg.d_l, Group::kHostLm);
  head_w_ = store
                .add("hostlm.head.w",
                     gaussian_init(rng, {cfg.vocab_size, cfg.d_l}),
                     Group::kHostLm)
                .tensor;
  head_b_ = store
                .add("hostlm.head.b", Tensor::zeros({cfg.vocab_size}),
                     Group::kHostLm)
                .tensor;
}

bool HostLm::lora_enabled() const {
  return !blocks_.empty() && blocks_.front().lora_q.enabled();
}

Tensor HostLm::token_embedding_rows(const std::vector<int>& ids) const {
  return ops::embed_rows(tok_emb_, ids);
}

Tensor HostLm::forward(const Tensor& image_tokens,
                       const Tensor& knowledge_tokens,
                       const std::vector<int>& text_ids,
                       const InjectionPlan* injection, bool use_lora,
                       InjectionMode mode,
                       std::vector<int>* carried_rows) const {
  if (text_ids.empty()) throw ConfigError("hostlm: empty text sequence");
  if (injection &&
      static_cast<int>(injection->slices.size()) != cfg_.n_layers) {
    throw ConfigError("hostlm: injection plan has " +
                      std::to_string(injection->slices.size()) +
                      " slices for " + std::to_string(cfg_.n_layers) +
                      " layers");
  }
  std::vector<Tensor> parts;
  int prefix_rows = 0;
  if (!image_tokens.empty_buffer()) {
    parts.push_back(image_tokens);
    prefix_rows += image_tokens.rows();
  }
  if (!knowledge_tokens.empty_buffer()) {
    parts.push_back(knowledge_tokens);
    prefix_rows += knowledge_tokens.rows();
  }
  parts.push_back(ops::embed_rows(tok_emb_, text_ids));
  Tensor x = parts.size() == 1 ? parts[0] : ops::concat_rows(parts);
  const int s = x.rows();
  if (s > cfg_.max_seq_len) {
    throw TruncationError("hostlm: sequence of " + std::to_string(s) +
                          " rows exceeds max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
  }
  x = ops::add(x, ops::slice_rows(pos_emb_, 0, s));

  const bool lora = use_lora && lora_enabled();
  int front = 0;  // injected rows currently carried (accumulate mode)
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto& blk = blocks_[static_cast<std::size_t>(l)];
    const int ld =
        injection ? injection->slices[static_cast<std::size_t>(l)].rows() : 0;
    if (ld > 0) {
      x = ops::concat_rows(
          {injection->slices[static_cast<std::size_t>(l)], x});
      front += ld;
    }
    const Tensor mask = ops::prefix_causal_mask(front, s);
    Tensor a_in = blk.ln1.forward(x);
    Tensor attn_out =
        lora ? blk.attn.forward_with(a_in, a_in, mask,
                                     lora_apply(blk.attn.wq, blk.lora_q),
                                     lora_apply(blk.attn.wv, blk.lora_v))
             : blk.attn.forward(a_in, a_in, mask);
    x = ops::add(x, attn_out);
    x = ops::add(x, blk.ffn.forward(blk.ln2.forward(x)));
    if (ld > 0 && mode == InjectionMode::kStrip) {
      x = ops::slice_rows(x, ld, ld + s);
      front -= ld;
    }
    if (carried_rows) carried_rows->push_back(x.rows());
  }
  const int text_start = front + prefix_rows;
  Tensor text_rows = ops::slice_rows(x, text_start, x.rows());
  return ops::linear(ln_f_.forward(text_rows), head_w_, head_b_);
}

void HostLm::merge_lora() {
  for (auto& blk : blocks_) {
    if (blk.lora_q.enabled()) {
      lora_merge(blk.attn.wq, blk.lora_q);
      double* pb = blk.lora_q.b.data();
      for (std::size_t i = 0; i < blk.lora_q.b.numel(); ++i) pb[i] = 0.0;
    }
    if (blk.lora_v.enabled()) {
      lora_merge(blk.attn.wv, blk.lora_v);
      double* pb = blk.lora_v.b.data();
      for (std::size_t i = 0; i < blk.lora_v.b.numel(); ++i) pb[i] = 0.0;
    }
  }
}

}  // namespace cvlm

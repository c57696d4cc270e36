// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "cvlm/fka.hpp"
#include "cvlm/nn.hpp"

namespace cvlm {

struct HostLmConfig {
  int d_l = 128;
  int n_layers = 4;  // LN
  int n_heads = 4;
  int vocab_size = 0;
  int max_seq_len = 96;
  int ffn_mult = 4;
  int lora_rank = 4;
  int lora_alpha = 8;

  void validate() const;
};

// Whether a layer's injected prefix is removed from its output before the
// next layer prepends its own slice (constant carried length), or left in
// place so prefixes pile up.
enum class InjectionMode : std::uint8_t { kStrip, kAccumulate };

// Low-rank delta for one base matrix: effective = base + (alpha/r) * b * a.
// b starts at zero so the adapted model equals the base at initialization.
struct LoraPair {
  Tensor a;  // [r, d_in]
  Tensor b;  // [d_out, r]
  int rank = 0;
  double alpha = 0.0;

  bool enabled() const { return rank > 0; }
};

Tensor lora_apply(const Tensor& base_w, const LoraPair& adapter);
// In-place base += delta (export path; pairs with a checkpoint merge flag).
void lora_merge(Tensor& base_w, const LoraPair& adapter);

// Patch features into host width: two linear layers with a GELU between.
// Operates on patch rows only, never the global token.
struct VisualMlp {
  Tensor w1, b1, w2, b2;

  void init(ParamStore& store, int d_v, int d_l, Rng& rng);
  Tensor forward(const Tensor& patches) const;
};

struct HostBlock {
  LayerNormParams ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;
  LoraPair lora_q, lora_v;
};

// Decoder-only LM over [image tokens ; knowledge tokens ; text] with
// optional per-layer prefix injection and LoRA on the q/v projections.
class HostLm {
 public:
  HostLm() = default;
  HostLm(const HostLmConfig& cfg, ParamStore& store, Rng& rng, Rng& lora_rng,
         bool with_lora);

  const HostLmConfig& config() const { return cfg_; }
  bool lora_enabled() const;

  // image_tokens/knowledge_tokens may be default (absent). injection may be
  // null. Returns logits at the text positions, [len(text_ids), vocab].
  // carried_rows, when given, records the row count carried out of each
  // layer (constant in strip mode, growing in accumulate mode).
  Tensor forward(const Tensor& image_tokens, const Tensor& knowledge_tokens,
                 const std::vector<int>& text_ids,
                 const InjectionPlan* injection, bool use_lora,
                 InjectionMode mode = InjectionMode::kStrip,
                 std::vector<int>* carried_rows = nullptr) const;

  // Token embedding rows without positions (FKA instruction input).
  Tensor token_embedding_rows(const std::vector<int>& ids) const;

  // Folds every adapter into its base matrix and zeroes the adapter.
  void merge_lora();

 private:
  HostLmConfig cfg_;
  Tensor tok_emb_;  // [vocab, d_l]
  Tensor pos_emb_;  // [max_seq_len, d_l]
  std::vector<HostBlock> blocks_;
  LayerNormParams ln_f_;
  Tensor head_w_, head_b_;
};

}  // namespace cvlm

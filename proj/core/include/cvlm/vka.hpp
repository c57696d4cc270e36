// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "cvlm/nn.hpp"
#include "cvlm/vision.hpp"

namespace cvlm {

struct VkaConfig {
  int d_k = 64;
  int n_blocks = 4;
  int n_heads = 4;
  int vocab_size = 0;
  int n_query_tokens = 8;
  std::vector<int> prompt_token_ids;  // begins with BOS
  int max_seq_len = 64;
  int ffn_mult = 4;
  int d_v = 32;  // image feature width (cross-attention keys/values)
  int d_l = 128; // host width (knowledge projection output)

  void validate(int bos_id) const;
};

// One decoder block: pre-LN causal self-attention, pre-LN cross-attention to
// the image sequence, pre-LN feed-forward, each with a residual. The
// cross-attention output projection starts at zero so an untrained block
// behaves text-only.
struct VkaBlock {
  LayerNormParams ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  void init(ParamStore& store, const std::string& prefix,
            const VkaConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& image_seq,
                 const Tensor& mask) const;
};

// Small autoregressive LM over the toy vocabulary whose blocks cross-attend
// to the image sequence; query-token hidden states project into host space.
class Vka {
 public:
  Vka() = default;
  Vka(const VkaConfig& cfg, ParamStore& store, Rng& rng, int bos_id);

  const VkaConfig& config() const { return cfg_; }

  // Token + position embeddings for a sequence starting at position 0.
  Tensor embed_tokens(const std::vector<int>& ids) const;

  // Decoder stack over already-embedded rows under the given mask.
  Tensor backbone(const Tensor& x, const Tensor& image_seq,
                  const Tensor& mask) const;

  // Teacher-forced forward over [prompt_ids ; target_ids]; returns the
  // logits rows that predict each target token, shape [len(target), vocab].
  Tensor pretrain_logits(const PatchSequence& image,
                         const std::vector<int>& prompt_ids,
                         const std::vector<int>& target_ids) const;

  // Eq-1 path: backbone over [prompt ; query tokens], hidden states at the
  // query positions, projected to host width. Returns [N, d_l].
  Tensor encode_knowledge(const PatchSequence& image) const;

  // Greedy decode from the knowledge prompt; stops at eos_id or the cap.
  // Returns generated ids only (no prompt).
  std::vector<int> generate(const PatchSequence& image, int max_new_tokens,
                            int eos_id) const;

 private:
  VkaConfig cfg_;
  Tensor tok_emb_;  // [vocab, d_k]
  Tensor pos_emb_;  // [max_seq_len, d_k]
  std::vector<VkaBlock> blocks_;
  LayerNormParams ln_f_;
  Tensor head_w_, head_b_;
  Tensor queries_;          // [N, d_k]
  Tensor proj_w_, proj_b_;  // [d_l, d_k], [d_l]
};

}  // namespace cvlm

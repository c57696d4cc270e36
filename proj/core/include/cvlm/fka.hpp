// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "cvlm/nn.hpp"
#include "cvlm/vision.hpp"
#include "cvlm/vka.hpp"

namespace cvlm {

struct FkaConfig {
  int n_layers = 4;
  int n_heads = 4;
  int per_layer_len = 2;   // LD
  int n_host_layers = 4;   // LN
  int d_l = 128;
  int ffn_mult = 4;

  int n_distill() const { return per_layer_len * n_host_layers; }
  void validate() const;
};

// Knowledge embeddings of the top-k image regions, stacked in confidence
// order; all rows in host width.
struct RegionKnowledgeBank {
  Tensor entries;               // [k * N, d_l]
  std::vector<Region> regions;  // source boxes, padded flags
};

// h_FKA split into per-host-layer prefixes; slice l feeds host layer l.
struct InjectionPlan {
  std::vector<Tensor> slices;  // LN tensors of [LD, d_l]
  int per_layer_len = 0;
};

// Bidirectional distiller: distillation vectors and instruction rows pass
// through self-attention, cross-attention over the region bank, and an MLP,
// each with a residual and no internal normalization.
struct FkaLayer {
  MultiHeadAttention self_attn, cross_attn;
  FeedForward mlp;

  void init(ParamStore& store, const std::string& prefix,
            const FkaConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& s, const Tensor& bank) const;
};

class Fka {
 public:
  Fka() = default;
  Fka(const FkaConfig& cfg, ParamStore& store, Rng& rng);

  const FkaConfig& config() const { return cfg_; }
  const Tensor& distill_vectors() const { return distill_; }

  // [h_D ; instruction] through the stack; returns the first N_D rows.
  // N_D = 0 short-circuits to an empty output.
  Tensor forward(const Tensor& instruction_embeds,
                 const RegionKnowledgeBank& bank) const;

 private:
  FkaConfig cfg_;
  Tensor distill_;  // [N_D, d_l]
  std::vector<FkaLayer> layers_;
};

// Top-k regions, cropped, encoded, and passed through encode_knowledge;
// fewer-than-k candidate lists pad by repeating the top region.
RegionKnowledgeBank build_region_bank(const ImageGrid& image,
                                      const VisionEncoder& vision,
                                      const Vka& vka, int k = 5);

// Same, from pre-encoded region crops (one PatchSequence per region, in
// confidence order). Used when the vision encoder is frozen and its outputs
// are cached.
RegionKnowledgeBank build_region_bank_from(
    const std::vector<PatchSequence>& encoded_regions,
    std::vector<Region> regions, const Vka& vka);

// Slice l = rows [l*LD, (l+1)*LD). Row count must divide evenly by LN.
InjectionPlan plan_injection(const Tensor& h_fka, int n_host_layers);

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvlm/data.hpp"
#include "cvlm/fka.hpp"
#include "cvlm/hostlm.hpp"
#include "cvlm/ops.hpp"
#include "cvlm/vision.hpp"
#include "cvlm/vka.hpp"

namespace cvlm {

// Widths and toggles for one end-to-end model. Component weights draw from
// per-component seed streams, so two bundles with the same seed share every
// weight they both construct regardless of which optional parts differ.
struct BundleConfig {
  std::uint64_t seed = 1234;
  VisionConfig vision;
  VkaConfig vka;
  FkaConfig fka;
  HostLmConfig host;
  bool with_vka = true;   // feed h_KO knowledge tokens to the host
  bool with_fka = true;   // construct the distiller (needs per_layer_len > 0)
  bool with_lora = true;  // register q/v adapters on the host
  bool align_with_image_tokens = false;  // stage-2 host input includes h_IO
  InjectionMode injection_mode = InjectionMode::kStrip;
  int region_k = 5;  // region bank size

  void validate() const;
};

// Vision features of one image, computed once while the encoder is frozen.
// All tensors are constants (no autodiff history).
struct EncodedImage {
  PatchSequence full;
  std::vector<Region> regions;             // confidence order, padded to k
  std::vector<PatchSequence> region_seqs;  // encoded crops, same order
};

// The assembled pipeline: vision encoder, visual MLP, knowledge aligner,
// optional per-layer distiller, host LM, and one parameter store over all
// of them. Also owns the frozen-vision feature cache and the per-stage
// loss/decoding entry points.
class ModelBundle {
 public:
  explicit ModelBundle(const BundleConfig& cfg);
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  const BundleConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const VisionEncoder& vision() const { return vision_; }
  const VisualMlp& mlp() const { return mlp_; }
  const Vka& vka() const { return vka_; }
  const Fka* fka() const { return fka_.get(); }
  HostLm& host() { return host_; }
  const HostLm& host() const { return host_; }
  bool has_fka() const { return fka_ != nullptr; }

  // Cached features, keyed by pixel-buffer identity; valid only while the
  // vision encoder is frozen. The backing image must outlive the cache.
  const EncodedImage& encoded_frozen(const ImageGrid& image) const;
  void clear_image_cache() { cache_.clear(); }
  std::size_t image_cache_size() const { return cache_.size(); }

  // Batch losses: per-sample next-token cross-entropy sums, combined across
  // the batch, divided by the total predicted-token count under kMean.

  // Aligner LM head predicts the knowledge string from its prompt.
  Tensor vka_pretrain_loss(const std::vector<const KnowledgePair*>& batch,
                           const Tokenizer& tok, Reduction red);
  // Host LM predicts the knowledge string from the h_KO prefix alone.
  Tensor vka_align_loss(const std::vector<const KnowledgePair*>& batch,
                        const Tokenizer& tok, Reduction red);
  // Full pipeline predicts answer tokens given [h_IO ; h_KO ; question].
  Tensor instruction_loss(const std::vector<const InstructionSample*>& batch,
                          const Tokenizer& tok, Reduction red);
  // Host LM predicts a caption from the h_IO prefix (optional MLP warm-up).
  Tensor caption_loss(const std::vector<const KnowledgePair*>& batch,
                      const Tokenizer& tok, Reduction red);

  // Greedy decode of an answer (words only, no EOS); stops at EOS, the
  // token cap, or the host context limit.
  std::string generate_answer(const ImageGrid& image,
                              const std::string& question,
                              const Tokenizer& tok,
                              int max_new_tokens = 12) const;

  // Raw host logits over a text sequence with each optional input toggled
  // explicitly; no gradients. For equivalence checks between constructions.
  Tensor probe_logits(const ImageGrid& image,
                      const std::vector<int>& text_ids, bool use_vka,
                      bool use_fka, bool use_lora) const;

 private:
  struct Stage3Parts {
    Tensor image_tokens;
    Tensor knowledge_tokens;
    InjectionPlan plan;
    bool has_plan = false;
  };
  Stage3Parts pipeline_parts(const EncodedImage& enc,
                             const std::vector<int>& question_ids) const;

  BundleConfig cfg_;
  ParamStore store_;
  VisionEncoder vision_;
  VisualMlp mlp_;
  Vka vka_;
  std::unique_ptr<Fka> fka_;
  HostLm host_;
  mutable std::unordered_map<const double*, EncodedImage> cache_;
};

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#include "cvlm/bundle.hpp"

#include "cvlm/ops.hpp"

namespace cvlm {

void BundleConfig::validate() const {
  if (vision.d_v != vka.d_v) {
    throw ConfigError("bundle: vision width " + std::to_string(vision.d_v) +
                      " != aligner cross-attention width " +
                      std::to_string(vka.d_v));
  }
  if (vka.d_l != host.d_l) {
    throw ConfigError("bundle: aligner projection width " +
                      std::to_string(vka.d_l) + " != host width " +
                      std::to_string(host.d_l));
  }
  if (fka.d_l != host.d_l) {
    throw ConfigError("bundle: distiller width " + std::to_string(fka.d_l) +
                      " != host width " + std::to_string(host.d_l));
  }
  if (fka.n_host_layers != host.n_layers) {
    throw ConfigError("bundle: distiller targets " +
                      std::to_string(fka.n_host_layers) +
                      " layers but host has " + std::to_string(host.n_layers));
  }
  if (vka.vocab_size != host.vocab_size) {
    throw ConfigError("bundle: aligner vocab " +
                      std::to_string(vka.vocab_size) + " != host vocab " +
                      std::to_string(host.vocab_size));
  }
  if (region_k < 1) throw ConfigError("bundle: region_k must be >= 1");
}

ModelBundle::ModelBundle(const BundleConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng vision_rng(mix_seed(cfg_.seed, hash_str("vision")));
  Rng mlp_rng(mix_seed(cfg_.seed, hash_str("mlp")));
  Rng vka_rng(mix_seed(cfg_.seed, hash_str("vka")));
  Rng fka_rng(mix_seed(cfg_.seed, hash_str("fka")));
  Rng host_rng(mix_seed(cfg_.seed, hash_str("hostlm")));
  Rng lora_rng(mix_seed(cfg_.seed, hash_str("lora")));
  vision_ = VisionEncoder(cfg_.vision, store_, vision_rng);
  mlp_.init(store_, cfg_.vision.d_v, cfg_.host.d_l, mlp_rng);
  vka_ = Vka(cfg_.vka, store_, vka_rng, Tokenizer::kBos);
  if (cfg_.with_fka && cfg_.fka.n_distill() > 0) {
    fka_ = std::make_unique<Fka>(cfg_.fka, store_, fka_rng);
  }
  host_ = HostLm(cfg_.host, store_, host_rng, lora_rng, cfg_.with_lora);
}

const EncodedImage& ModelBundle::encoded_frozen(const ImageGrid& image) const {
  const double* key = image.pixels.data();
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  NoGrad ng;
  EncodedImage enc;
  enc.full = vision_.encode(image);
  enc.regions = propose_regions(image, cfg_.region_k);
  while (static_cast<int>(enc.regions.size()) < cfg_.region_k) {
    Region r = enc.regions.front();
    r.padded = true;
    enc.regions.push_back(r);
  }
  enc.region_seqs.reserve(enc.regions.size());
  for (const Region& r : enc.regions) {
    enc.region_seqs.push_back(vision_.encode(crop_region(image, r)));
  }
  return cache_.emplace(key, std::move(enc)).first->second;
}

namespace {

// Shared-batch reduction: sum of per-sample sums, over the token count for
// the mean.
Tensor combine(std::vector<Tensor> sums, int total_tokens, Reduction red) {
  Tensor total = sums.front();
  for (std::size_t i = 1; i < sums.size(); ++i) {
    total = ops::add(total, sums[i]);
  }
  if (red == Reduction::kMean) {
    total = ops::scale(total, 1.0 / static_cast<double>(total_tokens));
  }
  return total;
}

// [BOS ; body ; EOS]
std::vector<int> wrap_text(const std::vector<int>& body) {
  std::vector<int> text;
  text.reserve(body.size() + 2);
  text.push_back(Tokenizer::kBos);
  text.insert(text.end(), body.begin(), body.end());
  text.push_back(Tokenizer::kEos);
  return text;
}

int argmax_row(const Tensor& t, int row) {
  int best = 0;
  double best_v = t.at(row, 0);
  for (int j = 1; j < t.cols(); ++j) {
    const double v = t.at(row, j);
    if (v > best_v) {
      best_v = v;
      best = j;
    }
  }
  return best;
}

}  // namespace

Tensor ModelBundle::vka_pretrain_loss(
    const std::vector<const KnowledgePair*>& batch, const Tokenizer& tok,
    Reduction red) {
  if (batch.empty()) throw DegenerateBatchError("vka_pretrain: empty batch");
  std::vector<Tensor> sums;
  int tokens = 0;
  for (const KnowledgePair* p : batch) {
    PatchSequence ps = vision_.encode(p->image);
    std::vector<int> target = tok.tokenize(p->knowledge);
    target.push_back(Tokenizer::kEos);
    Tensor logits =
        vka_.pretrain_logits(ps, cfg_.vka.prompt_token_ids, target);
    sums.push_back(ops::cross_entropy(logits, target, -1, Reduction::kSum));
    tokens += static_cast<int>(target.size());
  }
  return combine(std::move(sums), tokens, red);
}

Tensor ModelBundle::vka_align_loss(
    const std::vector<const KnowledgePair*>& batch, const Tokenizer& tok,
    Reduction red) {
  if (batch.empty()) throw DegenerateBatchError("vka_align: empty batch");
  std::vector<Tensor> sums;
  int tokens = 0;
  for (const KnowledgePair* p : batch) {
    const EncodedImage& enc = encoded_frozen(p->image);
    Tensor hko = vka_.encode_knowledge(enc.full);
    Tensor image_tokens;
    if (cfg_.align_with_image_tokens) {
      image_tokens = mlp_.forward(enc.full.patches);
    }
    std::vector<int> text = wrap_text(tok.tokenize(p->knowledge));
    Tensor logits = host_.forward(image_tokens, hko, text, nullptr, false,
                                  cfg_.injection_mode);
    const int t = static_cast<int>(text.size());
    std::vector<int> targets(text.begin() + 1, text.end());
    Tensor pred = ops::slice_rows(logits, 0, t - 1);
    sums.push_back(ops::cross_entropy(pred, targets, -1, Reduction::kSum));
    tokens += t - 1;
  }
  return combine(std::move(sums), tokens, red);
}

ModelBundle::Stage3Parts ModelBundle::pipeline_parts(
    const EncodedImage& enc, const std::vector<int>& question_ids) const {
  Stage3Parts parts;
  parts.image_tokens = mlp_.forward(enc.full.patches);
  if (cfg_.with_vka) {
    parts.knowledge_tokens = vka_.encode_knowledge(enc.full);
  }
  if (has_fka()) {
    RegionKnowledgeBank bank =
        build_region_bank_from(enc.region_seqs, enc.regions, vka_);
    Tensor instruction = host_.token_embedding_rows(question_ids);
    Tensor h_fka = fka_->forward(instruction, bank);
    parts.plan = plan_injection(h_fka, cfg_.host.n_layers);
    parts.has_plan = true;
  }
  return parts;
}

Tensor ModelBundle::instruction_loss(
    const std::vector<const InstructionSample*>& batch, const Tokenizer& tok,
    Reduction red) {
  if (batch.empty()) throw DegenerateBatchError("instruction: empty batch");
  std::vector<Tensor> sums;
  int tokens = 0;
  for (const InstructionSample* s : batch) {
    const EncodedImage& enc = encoded_frozen(s->image);
    std::vector<int> q = tok.tokenize(s->question);
    std::vector<int> a = tok.tokenize(s->answer);
    Stage3Parts parts = pipeline_parts(enc, q);
    std::vector<int> text;
    text.reserve(q.size() + a.size() + 2);
    text.push_back(Tokenizer::kBos);
    text.insert(text.end(), q.begin(), q.end());
    text.insert(text.end(), a.begin(), a.end());
    text.push_back(Tokenizer::kEos);
    Tensor logits = host_.forward(
        parts.image_tokens, parts.knowledge_tokens, text,
        parts.has_plan ? &parts.plan : nullptr, cfg_.with_lora,
        cfg_.injection_mode);
    const int t = static_cast<int>(text.size());
    const int nq = static_cast<int>(q.size());
    // Row i predicts text[i+1]; only answer tokens and EOS carry loss.
    std::vector<int> targets(static_cast<std::size_t>(t - 1));
    for (int i = 0; i < t - 1; ++i) {
      targets[static_cast<std::size_t>(i)] = i < nq ? -1 : text[i + 1];
    }
    Tensor pred = ops::slice_rows(logits, 0, t - 1);
    sums.push_back(ops::cross_entropy(pred, targets, -1, Reduction::kSum));
    tokens += static_cast<int>(a.size()) + 1;
  }
  return combine(std::move(sums), tokens, red);
}

Tensor ModelBundle::caption_loss(const std::vector<const KnowledgePair*>& batch,
                                 const Tokenizer& tok, Reduction red) {
  if (batch.empty()) throw DegenerateBatchError("caption: empty batch");
  std::vector<Tensor> sums;
  int tokens = 0;
  for (const KnowledgePair* p : batch) {
    const EncodedImage& enc = encoded_frozen(p->image);
    Tensor image_tokens = mlp_.forward(enc.full.patches);
    std::vector<int> text = wrap_text(tok.tokenize(p->knowledge));
    Tensor logits = host_.forward(image_tokens, Tensor(), text, nullptr,
                                  false, cfg_.injection_mode);
    const int t = static_cast<int>(text.size());
    std::vector<int> targets(text.begin() + 1, text.end());
    Tensor pred = ops::slice_rows(logits, 0, t - 1);
    sums.push_back(ops::cross_entropy(pred, targets, -1, Reduction::kSum));
    tokens += t - 1;
  }
  return combine(std::move(sums), tokens, red);
}

std::string ModelBundle::generate_answer(const ImageGrid& image,
                                         const std::string& question,
                                         const Tokenizer& tok,
                                         int max_new_tokens) const {
  NoGrad ng;
  const EncodedImage& enc = encoded_frozen(image);
  std::vector<int> q = tok.tokenize(question);
  Stage3Parts parts = pipeline_parts(enc, q);
  int prefix_rows = parts.image_tokens.rows();
  if (!parts.knowledge_tokens.empty_buffer()) {
    prefix_rows += parts.knowledge_tokens.rows();
  }
  const int capacity = cfg_.host.max_seq_len - prefix_rows;
  std::vector<int> text;
  text.reserve(q.size() + 1 + static_cast<std::size_t>(max_new_tokens));
  text.push_back(Tokenizer::kBos);
  text.insert(text.end(), q.begin(), q.end());
  std::vector<int> out;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (static_cast<int>(text.size()) >= capacity) break;
    Tensor logits = host_.forward(
        parts.image_tokens, parts.knowledge_tokens, text,
        parts.has_plan ? &parts.plan : nullptr, cfg_.with_lora,
        cfg_.injection_mode);
    const int next = argmax_row(logits, logits.rows() - 1);
    if (next == Tokenizer::kEos) break;
    out.push_back(next);
    text.push_back(next);
  }
  return tok.detokenize(out);
}

Tensor ModelBundle::probe_logits(const ImageGrid& image,
                                 const std::vector<int>& text_ids,
                                 bool use_vka, bool use_fka,
                                 bool use_lora) const {
  NoGrad ng;
  const EncodedImage& enc = encoded_frozen(image);
  Tensor image_tokens = mlp_.forward(enc.full.patches);
  Tensor hko;
  if (use_vka) hko = vka_.encode_knowledge(enc.full);
  InjectionPlan plan;
  bool has_plan = false;
  if (use_fka && has_fka()) {
    RegionKnowledgeBank bank =
        build_region_bank_from(enc.region_seqs, enc.regions, vka_);
    Tensor h_fka = fka_->forward(host_.token_embedding_rows(text_ids), bank);
    plan = plan_injection(h_fka, cfg_.host.n_layers);
    has_plan = true;
  }
  return host_.forward(image_tokens, hko, text_ids,
                       has_plan ? &plan : nullptr, use_lora,
                       cfg_.injection_mode);
}

}  // namespace cvlm


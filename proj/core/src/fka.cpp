// SPDX-License-Identifier: Apache-2.0
#include "cvlm/fka.hpp"

#include "cvlm/ops.hpp"

namespace cvlm {

void FkaConfig::validate() const {
  if (n_layers < 1) throw ConfigError("fka: need at least one layer");
  if (per_layer_len < 0) throw ConfigError("fka: per-layer length must be >= 0");
  if (n_host_layers < 1) throw ConfigError("fka: host layer count must be >= 1");
  if (d_l <= 0 || n_heads <= 0 || d_l % n_heads != 0) {
    throw ConfigError("fka: width " + std::to_string(d_l) +
                      " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
}

void FkaLayer::init(ParamStore& store, const std::string& prefix,
                    const FkaConfig& cfg, Rng& rng) {
  self_attn.init(store, prefix + ".self", cfg.d_l, cfg.n_heads, Group::kFka,
                 rng);
  cross_attn.init(store, prefix + ".cross", cfg.d_l, cfg.n_heads, Group::kFka,
                  rng);
  mlp.init(store, prefix + ".mlp", cfg.d_l, cfg.ffn_mult, Group::kFka, rng);
}

Tensor FkaLayer::forward(const Tensor& s, const Tensor& bank) const {
  Tensor h = ops::add(self_attn.forward(s, s, Tensor{}), s);
  h = ops::add(cross_attn.forward(h, bank, Tensor{}), h);
  return ops::add(mlp.forward(h), h);
}

Fka::Fka(const FkaConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  distill_ = store
                 .add("fka.distill",
                      gaussian_init(rng, {cfg_.n_distill(), cfg_.d_l}),
                      Group::kFka)
                 .tensor;
  layers_.resize(static_cast<std::size_t>(cfg_.n_layers));
  for (int i = 0; i < cfg_.n_layers; ++i) {
    layers_[static_cast<std::size_t>(i)].init(
        store, "fka.layer" + std::to_string(i), cfg_, rng);
  }
}

Tensor Fka::forward(const Tensor& instruction_embeds,
                    const RegionKnowledgeBank& bank) const {
  const int n_d = cfg_.n_distill();
  if (n_d == 0) return Tensor::zeros({0, cfg_.d_l});
  if (instruction_embeds.cols() != cfg_.d_l) {
    throw ConfigError("fka: instruction width " +
                      std::to_string(instruction_embeds.cols()) +
                      " does not match d_l " + std::to_string(cfg_.d_l));
  }
  if (bank.entries.cols() != cfg_.d_l) {
    throw ConfigError("fka: bank width " +
                      std::to_string(bank.entries.cols()) +
                      " does not match d_l " + std::to_string(cfg_.d_l));
  }
  Tensor s = ops::concat_rows({distill_, instruction_embeds});
  for (const auto& layer : layers_) s = layer.forward(s, bank.entries);
  return ops::slice_rows(s, 0, n_d);
}

RegionKnowledgeBank build_region_bank_from(
    const std::vector<PatchSequence>& encoded_regions,
    std::vector<Region> regions, const Vka& vka) {
  if (encoded_regions.empty() || encoded_regions.size() != regions.size()) {
    throw ConfigError("region bank: " +
                      std::to_string(encoded_regions.size()) +
                      " encodings for " + std::to_string(regions.size()) +
                      " regions");
  }
  RegionKnowledgeBank bank;
  bank.regions = std::move(regions);
  std::vector<Tensor> entries;
  entries.reserve(encoded_regions.size());
  for (const auto& seq : encoded_regions) {
    entries.push_back(vka.encode_knowledge(seq));
  }
  bank.entries = ops::concat_rows(entries);
  return bank;
}

RegionKnowledgeBank build_region_bank(const ImageGrid& image,
                                      const VisionEncoder& vision,
                                      const Vka& vka, int k) {
  std::vector<Region> regions = propose_regions(image, k);
  if (regions.empty()) {
    throw ConfigError("region bank: proposer returned no candidates");
  }
  while (static_cast<int>(regions.size()) < k) {
    Region pad = regions.front();
    pad.padded = true;
    regions.push_back(pad);
  }
  std::vector<PatchSequence> encoded;
  encoded.reserve(regions.size());
  for (const auto& r : regions) {
    encoded.push_back(vision.encode(crop_region(image, r)));
  }
  return build_region_bank_from(std::move(encoded), std::move(regions), vka);
}

InjectionPlan plan_injection(const Tensor& h_fka, int n_host_layers) {
  if (n_host_layers < 1) {
    throw ConfigError("injection plan: host layer count must be >= 1");
  }
  const int n_d = h_fka.rows();
  if (n_d % n_host_layers != 0) {
    throw ConfigError("injection plan: " + std::to_string(n_d) +
                      " rows do not divide into " +
                      std::to_string(n_host_layers) + " layers");
  }
  InjectionPlan plan;
  plan.per_layer_len = n_d / n_host_layers;
  plan.slices.reserve(static_cast<std::size_t>(n_host_layers));
  for (int l = 0; l < n_host_layers; ++l) {
    plan.slices.push_back(ops::slice_rows(h_fka, l * plan.per_layer_len,
                                          (l + 1) * plan.per_layer_len));
  }
  return plan;
}

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvlm/bundle.hpp"

namespace cvlm {

// Full run configuration: every field has a default, every file key maps to
// exactly one field, and unknown keys are errors. The file format is a flat
// TOML subset: [section] headers, `key = value` lines with integer, float,
// boolean, or double-quoted string values, and # comments.
struct RunConfig {
  std::uint64_t seed = 1234;

  struct WorldSection {
    int n_entities = 64;
    int n_makers = 8;
    int n_origins = 8;
    int n_categories = 6;
    int n_names = 16;
    int renders_per_entity = 5;
    int renders_per_combo = 5;
    std::uint64_t layout_seed = 7;
    std::uint64_t split_seed = 11;
  } world;

  struct VisionSection {
    int height = 32;
    int width = 32;
    int channels = 3;
    int patch = 8;
    int d_v = 32;
  } vision;

  struct VkaSection {
    int d_k = 64;
    int n_blocks = 4;
    int n_heads = 4;
    int n_query_tokens = 8;
    int max_seq_len = 64;
    int ffn_mult = 4;
  } vka;

  struct FkaSection {
    int n_layers = 4;
    int n_heads = 4;
    int per_layer_len = 2;
    int ffn_mult = 4;
  } fka;

  struct HostSection {
    int d_l = 128;
    int n_layers = 4;
    int n_heads = 4;
    int max_seq_len = 96;
    int ffn_mult = 4;
    int lora_rank = 4;
    int lora_alpha = 8;
  } hostlm;

  struct ModelSection {
    bool with_vka = true;
    bool with_fka = true;
    bool with_lora = true;
    bool align_with_image_tokens = false;
    std::string injection_mode = "strip";  // or "accumulate"
    int region_k = 5;
  } model;

  struct TrainSection {
    std::string loss_reduction = "mean";  // or "sum"
    double warmup_frac = 0.03;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
  } train;

  struct Stage1Section {
    int steps = 1500;
    int batch_size = 8;
    double lr = 5e-5;
  } stage1;

  struct Stage2Section {
    int steps = 1200;
    int batch_size = 8;
    double lr = 1e-4;
  } stage2;

  struct Stage3Section {
    int steps = 1500;
    int batch_size = 8;
    double lr_adapters = 1e-4;  // lora + fka
    double lr_backbone = 2e-5;  // mlp + vka
    int mlp_warmup_steps = 0;   // optional captioning pre-stage
    double lr_mlp_warmup = 1e-4;
  } stage3;

  struct EvalSection {
    int max_new_tokens = 12;
    int limit = 0;  // 0 = every sample
  } eval;

  struct PathsSection {
    std::string data_dir = "data";
  } paths;
};

// ConfigError on unknown section/key, bad value, or syntax; messages carry
// the 1-based line number.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Fully resolved echo; parses back to an identical config.
std::string render_run_config(const RunConfig& cfg);
// Same content as a JSON document (checkpoint metadata / run summaries).
std::string run_config_json(const RunConfig& cfg);

Reduction reduction_from_name(const std::string& s);
InjectionMode injection_mode_from_name(const std::string& s);

WorldConfig make_world_config(const RunConfig& cfg);
// Model wiring derived from the config plus tokenizer facts.
BundleConfig make_bundle_config(const RunConfig& cfg, int vocab_size,
                                std::vector<int> prompt_token_ids);

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "cvlm/config.hpp"
#include "cvlm/error.hpp"

using namespace cvlm;

namespace {

bool mentions_line(const std::string& what, int lineno) {
  return what.find("line " + std::to_string(lineno)) != std::string::npos;
}

}  // namespace

TEST_CASE("stage learning-rate defaults") {
  RunConfig cfg;
  CHECK(cfg.stage1.lr == 5e-5);
  CHECK(cfg.stage2.lr == 1e-4);
  CHECK(cfg.stage3.lr_adapters == 1e-4);
  CHECK(cfg.stage3.lr_backbone == 2e-5);
}

TEST_CASE("structural defaults") {
  RunConfig cfg;
  CHECK(cfg.seed == 1234);
  CHECK(cfg.world.n_entities == 64);
  CHECK(cfg.world.n_makers == 8);
  CHECK(cfg.world.n_origins == 8);
  CHECK(cfg.world.n_categories == 6);
  CHECK(cfg.world.n_names == 16);
  CHECK(cfg.world.layout_seed == 7);
  CHECK(cfg.world.split_seed == 11);
  CHECK(cfg.vision.height == 32);
  CHECK(cfg.vision.width == 32);
  CHECK(cfg.vision.channels == 3);
  CHECK(cfg.vision.patch == 8);
  CHECK(cfg.vision.d_v == 32);
  CHECK(cfg.vka.d_k == 64);
  CHECK(cfg.vka.n_query_tokens == 8);
  CHECK(cfg.fka.per_layer_len == 2);
  CHECK(cfg.hostlm.d_l == 128);
  CHECK(cfg.hostlm.lora_rank == 4);
  CHECK(cfg.hostlm.lora_alpha == 8);
  CHECK(cfg.model.with_vka);
  CHECK(cfg.model.with_fka);
  CHECK(cfg.model.with_lora);
  CHECK_FALSE(cfg.model.align_with_image_tokens);
  CHECK(cfg.model.injection_mode == "strip");
  CHECK(cfg.model.region_k == 5);
  CHECK(cfg.train.loss_reduction == "mean");
  CHECK(cfg.train.warmup_frac == 0.03);
  CHECK(cfg.train.weight_decay == 0.0);
  CHECK(cfg.train.clip_norm == 1.0);
  CHECK(cfg.eval.max_new_tokens == 12);
  CHECK(cfg.eval.limit == 0);
  CHECK(cfg.paths.data_dir == "data");
}

TEST_CASE("render then parse is the identity") {
  RunConfig cfg;
  cfg.seed = 99;
  cfg.world.n_entities = 16;
  cfg.vision.d_v = 24;
  cfg.vka.n_blocks = 2;
  cfg.hostlm.d_l = 48;
  cfg.model.with_vka = false;
  cfg.model.injection_mode = "accumulate";
  cfg.train.warmup_frac = 0.125;
  cfg.stage3.lr_backbone = 2.5e-5;
  cfg.paths.data_dir = "out/run data";
  const std::string text = render_run_config(cfg);
  RunConfig back = parse_run_config(text);
  CHECK(render_run_config(back) == text);
  CHECK(back.seed == 99);
  CHECK_FALSE(back.model.with_vka);
  CHECK(back.model.injection_mode == "accumulate");
  CHECK(back.stage3.lr_backbone == 2.5e-5);
  CHECK(back.paths.data_dir == "out/run data");
}

TEST_CASE("parsing applies sections, comments, and quoting") {
  const std::string text =
      "seed = 7  # top-level key before any section\n"
      "\n"
      "[world]\n"
      "n_entities = 12\n"
      "[model]\n"
      "with_lora = false\n"
      "injection_mode = \"accumulate\"\n"
      "[paths]\n"
      "data_dir = \"has # inside\"  # trailing comment\n";
  RunConfig cfg = parse_run_config(text);
  CHECK(cfg.seed == 7);
  CHECK(cfg.world.n_entities == 12);
  CHECK_FALSE(cfg.model.with_lora);
  CHECK(cfg.model.injection_mode == "accumulate");
  CHECK(cfg.paths.data_dir == "has # inside");
  // Untouched fields keep their defaults.
  CHECK(cfg.hostlm.d_l == 128);
}

TEST_CASE("parse errors carry one-based line numbers") {
  auto error_at = [](const std::string& text, int lineno) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return mentions_line(e.what(), lineno);
    }
    return false;
  };
  CHECK(error_at("[world]\nn_entities = 4\nbogus_key = 1\n", 3));
  CHECK(error_at("\n[nonsense]\n", 2));
  CHECK(error_at("[world\n", 1));
  CHECK(error_at("[world]\nn_entities 4\n", 2));
  CHECK(error_at("[world]\nn_entities =\n", 2));
  CHECK(error_at("[world]\nn_entities = soon\n", 2));
  CHECK(error_at("[model]\nwith_vka = yes\n", 2));
  CHECK(error_at("[paths]\ndata_dir = unquoted\n", 2));
  // A key valid in one section is unknown in another.
  CHECK(error_at("[world]\nd_l = 8\n", 2));
  // Top-level keys other than seed do not exist.
  CHECK(error_at("n_entities = 4\n", 1));
}

TEST_CASE("enum name mapping") {
  CHECK(reduction_from_name("mean") == Reduction::kMean);
  CHECK(reduction_from_name("sum") == Reduction::kSum);
  CHECK_THROWS_AS(reduction_from_name("median"), ConfigError);
  CHECK(injection_mode_from_name("strip") == InjectionMode::kStrip);
  CHECK(injection_mode_from_name("accumulate") == InjectionMode::kAccumulate);
  CHECK_THROWS_AS(injection_mode_from_name("replace"), ConfigError);
}

TEST_CASE("file load round-trips and missing files fail") {
  const std::string path = "/tmp/cvlm_test_config.toml";
  RunConfig cfg;
  cfg.seed = 4242;
  cfg.stage1.steps = 77;
  {
    std::ofstream out(path);
    out << render_run_config(cfg);
  }
  RunConfig back = load_run_config(path);
  CHECK(back.seed == 4242);
  CHECK(back.stage1.steps == 77);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_run_config("/tmp/definitely_missing.toml"),
                  ConfigError);
}

TEST_CASE("json echo is valid and complete") {
  RunConfig cfg;
  cfg.seed = 31;
  cfg.stage2.lr = 3e-4;
  nlohmann::json j = nlohmann::json::parse(run_config_json(cfg));
  CHECK(j["seed"] == 31);
  CHECK(j["stage2"]["lr"] == 3e-4);
  CHECK(j["model"]["injection_mode"] == "strip");
  CHECK(j["world"]["n_entities"] == 64);
  CHECK(j["train"]["loss_reduction"] == "mean");
}

TEST_CASE("derived world and bundle configs mirror the run config") {
  RunConfig cfg;
  cfg.world.n_entities = 10;
  cfg.world.n_names = 12;
  cfg.vision.d_v = 16;
  cfg.hostlm.d_l = 40;
  WorldConfig wc = make_world_config(cfg);
  CHECK(wc.n_entities == 10);
  CHECK(wc.n_names == 12);
  BundleConfig bc = make_bundle_config(cfg, 57, {0, 9, 9});
  CHECK(bc.seed == cfg.seed);
  CHECK(bc.vision.d_v == 16);
  CHECK(bc.host.d_l == 40);
  CHECK(bc.vka.d_l == 40);
  CHECK(bc.fka.d_l == 40);
  CHECK(bc.vka.d_v == 16);
  CHECK(bc.vka.vocab_size == 57);
  CHECK(bc.host.vocab_size == 57);
  CHECK(bc.vka.prompt_token_ids == std::vector<int>{0, 9, 9});
  CHECK(bc.with_vka == cfg.model.with_vka);
  CHECK(bc.injection_mode == InjectionMode::kStrip);
}

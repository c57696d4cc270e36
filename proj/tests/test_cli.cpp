// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const char* kScratch = "/tmp/cvlm_cli_scratch";

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small world + small model so the full pipeline stays in seconds.
const char* kTinyConfig =
    "seed = 4242\n"
    "[world]\n"
    "n_entities = 6\n"
    "n_makers = 3\n"
    "n_origins = 3\n"
    "n_categories = 3\n"
    "n_names = 6\n"
    "renders_per_entity = 1\n"
    "renders_per_combo = 1\n"
    "[vision]\n"
    "d_v = 16\n"
    "[vka]\n"
    "d_k = 32\n"
    "n_blocks = 1\n"
    "n_heads = 2\n"
    "n_query_tokens = 4\n"
    "max_seq_len = 48\n"
    "ffn_mult = 2\n"
    "[fka]\n"
    "n_layers = 1\n"
    "n_heads = 2\n"
    "per_layer_len = 2\n"
    "ffn_mult = 2\n"
    "[hostlm]\n"
    "d_l = 32\n"
    "n_layers = 2\n"
    "n_heads = 2\n"
    "max_seq_len = 64\n"
    "ffn_mult = 2\n"
    "lora_rank = 2\n"
    "lora_alpha = 4\n"
    "[stage1]\n"
    "steps = 3\n"
    "batch_size = 2\n"
    "[stage2]\n"
    "steps = 2\n"
    "batch_size = 2\n"
    "[stage3]\n"
    "steps = 3\n"
    "batch_size = 2\n"
    "[eval]\n"
    "max_new_tokens = 6\n";

void ensure_scratch() {
  static bool done = false;
  if (done) return;
  fs::remove_all(kScratch);
  fs::create_directories(kScratch);
  std::ofstream cfg(fs::path(kScratch) / "config.toml");
  cfg << kTinyConfig;
  done = true;
}

// Runs the installed binary from the scratch directory; returns the exit
// code and captures combined output.
int run_cli(const std::string& args, std::string* output = nullptr) {
  ensure_scratch();
  const std::string log = std::string(kScratch) + "/last_output.txt";
  const std::string cmd = "cd " + std::string(kScratch) + " && " +
                          CVLM_BIN_PATH + " " + args + " > " + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) *output = slurp(log);
  if (WIFEXITED(rc)) return WEXITSTATUS(rc);
  return -1;
}

std::string at(const std::string& rel) {
  return std::string(kScratch) + "/" + rel;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("usage surface") {
  std::string out;
  CHECK(run_cli("--help", &out) == 0);
  CHECK(out.find("gen-data") != std::string::npos);
  CHECK(run_cli("", &out) == 1);
  CHECK(run_cli("no-such-command", &out) == 1);
  CHECK(run_cli("pretrain-vka --bogus-flag", &out) == 1);
}

TEST_CASE("runtime failures exit 2 with a diagnostic") {
  std::string out;
  CHECK(run_cli("gen-data --config missing.toml", &out) == 2);
  CHECK(out.find("missing.toml") != std::string::npos);
  // Training before gen-data: the dataset dependency is reported.
  CHECK(run_cli("pretrain-vka --config config.toml --out runs/x", &out) == 2);
  CHECK(out.find("gen-data") != std::string::npos);
  CHECK(run_cli("inspect-checkpoint nope.ckpt", &out) == 2);
}

TEST_CASE("full pipeline: gen-data through evaluate and sweep") {
  std::string out;

  REQUIRE(run_cli("gen-data --config config.toml", &out) == 0);
  for (const char* f :
       {"data/pairs.jsonl", "data/instructions_train.jsonl",
        "data/instructions_heldout.jsonl", "data/captions.jsonl",
        "data/config.resolved.toml", "data/summary.json"}) {
    CHECK(fs::exists(at(f)));
  }
  // 6 entities x 1 render; 6 x 3 question kinds held in, 6 held out.
  CHECK(count_lines(slurp(at("data/pairs.jsonl"))) == 6);
  CHECK(count_lines(slurp(at("data/instructions_train.jsonl"))) == 18);
  CHECK(count_lines(slurp(at("data/instructions_heldout.jsonl"))) == 6);

  // With data present, later stages still demand a prior-stage checkpoint.
  CHECK(run_cli("align-vka --config config.toml --out bad", &out) == 2);
  CHECK(out.find("--from") != std::string::npos);

  REQUIRE(run_cli("pretrain-vka --config config.toml --out s1", &out) == 0);
  CHECK(fs::exists(at("s1/vka_pretrain.ckpt")));
  CHECK(fs::exists(at("s1/config.resolved.toml")));
  // Header plus one metrics row per step.
  CHECK(count_lines(slurp(at("s1/metrics.csv"))) == 4);

  REQUIRE(run_cli("align-vka --config config.toml "
                  "--from s1/vka_pretrain.ckpt --out s2",
                  &out) == 0);
  CHECK(fs::exists(at("s2/vka_align.ckpt")));

  REQUIRE(run_cli("finetune --config config.toml "
                  "--from s2/vka_align.ckpt --out s3",
                  &out) == 0);
  CHECK(fs::exists(at("s3/instruction_tune.ckpt")));

  REQUIRE(run_cli("evaluate --config config.toml "
                  "--from s3/instruction_tune.ckpt --split both --out ev",
                  &out) == 0);
  CHECK(fs::exists(at("ev/eval_heldin.csv")));
  CHECK(fs::exists(at("ev/eval_heldout.csv")));
  const std::string heldin = slurp(at("ev/eval_heldin.csv"));
  CHECK(heldin.find("category,n,accuracy") == 0);
  CHECK(heldin.find("all,18,") != std::string::npos);
  const std::string summary = slurp(at("ev/summary.json"));
  CHECK(summary.find("accuracy_heldin") != std::string::npos);
  CHECK(summary.find("accuracy_heldout") != std::string::npos);

  CHECK(run_cli("evaluate --config config.toml "
                "--from s3/instruction_tune.ckpt --split sideways",
                &out) == 2);
  CHECK(out.find("--split") != std::string::npos);

  REQUIRE(run_cli("sweep --config config.toml "
                  "--from s2/vka_align.ckpt --out sw",
                  &out) == 0);
  const std::string sweep = slurp(at("sw/sweep.csv"));
  // Header + 2 aligner settings x 4 distillation lengths.
  CHECK(count_lines(sweep) == 9);
  CHECK(fs::exists(at("sw/stage3_vka1_ld2.csv")));
  CHECK(fs::exists(at("sw/stage3_vka0_ld0.csv")));
}

TEST_CASE("checkpoint inspection prints the directory") {
  std::string out;
  REQUIRE(fs::exists(at("s1/vka_pretrain.ckpt")));
  CHECK(run_cli("inspect-checkpoint s1/vka_pretrain.ckpt", &out) == 0);
  CHECK(out.find("stage: vka_pretrain") != std::string::npos);
  CHECK(out.find("step: 3") != std::string::npos);
  CHECK(out.find("vka.tok_emb") != std::string::npos);
  CHECK(out.find("opt.m.") != std::string::npos);
}

TEST_CASE("identical commands produce identical checkpoints") {
  std::string out;
  REQUIRE(run_cli("pretrain-vka --config config.toml --out r1", &out) == 0);
  REQUIRE(run_cli("pretrain-vka --config config.toml --out r2", &out) == 0);
  CHECK(slurp(at("r1/vka_pretrain.ckpt")) ==
        slurp(at("r2/vka_pretrain.ckpt")));
  // A different master seed changes the result.
  REQUIRE(run_cli("pretrain-vka --config config.toml --seed 7 --out r3",
                  &out) == 0);
  CHECK(slurp(at("r1/vka_pretrain.ckpt")) !=
        slurp(at("r3/vka_pretrain.ckpt")));
  CHECK(slurp(at("r3/config.resolved.toml")).find("seed = 7") !=
        std::string::npos);
}

TEST_CASE("stop-after plus resume equals one uninterrupted run") {
  std::string out;
  REQUIRE(run_cli("finetune --config config.toml "
                  "--from s2/vka_align.ckpt --out f_full",
                  &out) == 0);
  REQUIRE(run_cli("finetune --config config.toml "
                  "--from s2/vka_align.ckpt --stop-after 2 --out f_part",
                  &out) == 0);
  REQUIRE(run_cli("finetune --config config.toml "
                  "--resume f_part/instruction_tune.ckpt --out f_part2",
                  &out) == 0);
  CHECK(slurp(at("f_full/instruction_tune.ckpt")) ==
        slurp(at("f_part2/instruction_tune.ckpt")));
}

TEST_CASE("merged-adapter checkpoints refuse further adapter training") {
  std::string out;
  REQUIRE(run_cli("finetune --config config.toml "
                  "--from s2/vka_align.ckpt --merge-lora --out fm",
                  &out) == 0);
  CHECK(run_cli("inspect-checkpoint fm/instruction_tune.ckpt", &out) == 0);
  CHECK(out.find("lora_merged: true") != std::string::npos);
  CHECK(run_cli("finetune --config config.toml "
                "--resume fm/instruction_tune.ckpt --out fm2",
                &out) == 2);
  CHECK(out.find("merged") != std::string::npos);
  // Wrong-stage resume is also refused.
  CHECK(run_cli("align-vka --config config.toml "
                "--resume s1/vka_pretrain.ckpt --out bad",
                &out) == 2);
}

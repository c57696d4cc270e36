// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cvlm/bundle.hpp"
#include "cvlm/config.hpp"
#include "cvlm/optim.hpp"

namespace cvlm {

enum class Stage : std::uint8_t {
  kVkaPretrain,
  kVkaAlign,
  kInstructionTune,
  kMlpCaption,
};

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& s);

// One stage's run parameters. group_lr lists exactly the groups trainable
// in the stage; every other group is frozen for its duration.
struct StageConfig {
  Stage stage = Stage::kVkaPretrain;
  int steps = 0;
  int batch_size = 0;
  std::map<Group, double> group_lr;
  int warmup_steps = 0;
  std::uint64_t seed = 0;  // batch sampling stream, independent of weights
  Reduction reduction = Reduction::kMean;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
};

// Steps/batch/lrs/warmup/seed for a stage, from the run configuration.
// The sampling seed mixes cfg.seed with the stage name.
StageConfig stage_config_from(const RunConfig& cfg, Stage s);

struct Datasets {
  std::vector<KnowledgePair> pairs;        // image-knowledge, stages 1 and 2
  std::vector<KnowledgePair> captions;     // optional MLP warm-up stage
  std::vector<InstructionSample> train;    // held-in QA
  std::vector<InstructionSample> held_out; // unseen entity-question combos
};

// Freeze pattern: vka_pretrain trains {vka, vision}; vka_align trains only
// vka.queries + vka.proj.*; instruction_tune trains {lora, fka, mlp, vka};
// mlp_caption trains {mlp}.
void apply_stage_trainability(Stage s, ParamStore& store);

// Sample index for (step, slot): stateless, so a resumed run draws the
// same batches as the uninterrupted one.
std::size_t batch_index(std::uint64_t seed, std::int64_t step, int slot,
                        std::size_t n);

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::map<Group, double> lr;
};

struct StageResult {
  std::vector<double> loss_trace;  // one entry per executed step
  std::vector<StepRecord> records;
};

// Fixed metrics schema:
// step,stage,loss,lr_vka,lr_mlp,lr_fka,lr_lora,lr_hostlm,lr_vision,grad_norm
void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const char* stage,
                       const StepRecord& rec);

// Runs steps [start_step, cfg.steps): sample batch, loss, backward, clip,
// AdamW. Appends one metrics row per step when metrics is non-null.
// TrainingAbort on a non-finite loss, naming the step. stop_step >= 0 ends
// the run early (checkpoint-and-resume workflows); the schedule still spans
// cfg.steps.
StageResult run_stage(ModelBundle& bundle, const Tokenizer& tok,
                      const StageConfig& cfg, const Datasets& data,
                      AdamW& opt, std::ostream* metrics,
                      std::int64_t start_step = 0,
                      std::int64_t stop_step = -1);

struct EvalRow {
  std::string category;
  int n = 0;
  int correct = 0;
};

struct EvalResult {
  std::vector<EvalRow> rows;  // one per question category, fixed order
  int n = 0;
  int correct = 0;

  double accuracy() const { return n == 0 ? 0.0 : double(correct) / n; }
};

// Trim + collapse whitespace; exact-match comparisons both sides.
std::string normalize_answer(const std::string& s);

// Greedy decode + exact match over (at most `limit`, 0 = all) samples.
EvalResult evaluate(const ModelBundle& bundle, const Tokenizer& tok,
                    const std::vector<InstructionSample>& samples,
                    int max_new_tokens, int limit = 0);

// "category,n,accuracy" rows (n/a when a category is absent) + "all" row.
std::string eval_csv(const EvalResult& r);

struct SweepCell {
  bool use_vka = true;
  int ld = 0;
  double final_loss = 0.0;
  double held_in_accuracy = 0.0;
  double held_out_accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

// Stage-3 grid over use_vka x LD in {0,1,2,4}. Every cell starts from the
// same stage-2 checkpoint (shared groups only; the distiller is sized per
// cell) and runs with identical sampling seeds. Writes per-cell metrics
// files and a combined sweep.csv under out_dir.
SweepResult ablation_sweep(const RunConfig& cfg, const Tokenizer& tok,
                           const Datasets& data,
                           const std::string& stage2_ckpt,
                           const std::string& out_dir);

std::string sweep_csv(const SweepResult& r);

}  // namespace cvlm

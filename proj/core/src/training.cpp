// SPDX-License-Identifier: Apache-2.0
#include "cvlm/training.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "cvlm/checkpoint.hpp"
#include "cvlm/ops.hpp"

namespace cvlm {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

constexpr Group kLrColumns[] = {Group::kVka,  Group::kMlp,    Group::kFka,
                                Group::kLora, Group::kHostLm, Group::kVision};

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kVkaPretrain: return "vka_pretrain";
    case Stage::kVkaAlign: return "vka_align";
    case Stage::kInstructionTune: return "instruction_tune";
    case Stage::kMlpCaption: return "mlp_caption";
  }
  return "?";
}

Stage stage_from_name(const std::string& s) {
  if (s == "vka_pretrain") return Stage::kVkaPretrain;
  if (s == "vka_align") return Stage::kVkaAlign;
  if (s == "instruction_tune") return Stage::kInstructionTune;
  if (s == "mlp_caption") return Stage::kMlpCaption;
  throw ConfigError("unknown stage name '" + s + "'");
}

StageConfig stage_config_from(const RunConfig& cfg, Stage s) {
  StageConfig sc;
  sc.stage = s;
  sc.reduction = reduction_from_name(cfg.train.loss_reduction);
  sc.weight_decay = cfg.train.weight_decay;
  sc.clip_norm = cfg.train.clip_norm;
  switch (s) {
    case Stage::kVkaPretrain:
      sc.steps = cfg.stage1.steps;
      sc.batch_size = cfg.stage1.batch_size;
      sc.group_lr = {{Group::kVka, cfg.stage1.lr},
                     {Group::kVision, cfg.stage1.lr}};
      break;
    case Stage::kVkaAlign:
      sc.steps = cfg.stage2.steps;
      sc.batch_size = cfg.stage2.batch_size;
      sc.group_lr = {{Group::kVka, cfg.stage2.lr}};
      break;
    case Stage::kInstructionTune:
      sc.steps = cfg.stage3.steps;
      sc.batch_size = cfg.stage3.batch_size;
      sc.group_lr = {{Group::kLora, cfg.stage3.lr_adapters},
                     {Group::kFka, cfg.stage3.lr_adapters},
                     {Group::kMlp, cfg.stage3.lr_backbone},
                     {Group::kVka, cfg.stage3.lr_backbone}};
      break;
    case Stage::kMlpCaption:
      sc.steps = cfg.stage3.mlp_warmup_steps;
      sc.batch_size = cfg.stage3.batch_size;
      sc.group_lr = {{Group::kMlp, cfg.stage3.lr_mlp_warmup}};
      break;
  }
  int warmup = static_cast<int>(
      std::llround(cfg.train.warmup_frac * static_cast<double>(sc.steps)));
  if (warmup >= sc.steps) warmup = sc.steps > 0 ? sc.steps - 1 : 0;
  if (warmup < 0) warmup = 0;
  sc.warmup_steps = warmup;
  sc.seed = mix_seed(cfg.seed, hash_str(stage_name(s)));
  return sc;
}

void apply_stage_trainability(Stage s, ParamStore& store) {
  store.set_trainable_all(false);
  switch (s) {
    case Stage::kVkaPretrain:
      store.set_trainable_group(Group::kVka, true);
      store.set_trainable_group(Group::kVision, true);
      break;
    case Stage::kVkaAlign:
      store.set_trainable("vka.queries", true);
      store.set_trainable("vka.proj.w", true);
      store.set_trainable("vka.proj.b", true);
      break;
    case Stage::kInstructionTune:
      store.set_trainable_group(Group::kLora, true);
      store.set_trainable_group(Group::kFka, true);
      store.set_trainable_group(Group::kMlp, true);
      store.set_trainable_group(Group::kVka, true);
      break;
    case Stage::kMlpCaption:
      store.set_trainable_group(Group::kMlp, true);
      break;
  }
}

std::size_t batch_index(std::uint64_t seed, std::int64_t step, int slot,
                        std::size_t n) {
  if (n == 0) throw DegenerateBatchError("batch_index: empty dataset");
  const std::uint64_t h =
      mix_seed(mix_seed(seed, static_cast<std::uint64_t>(step)),
               static_cast<std::uint64_t>(slot));
  return static_cast<std::size_t>(h % n);
}

void write_metrics_header(std::ostream& os) {
  os << "step,stage,loss";
  for (Group g : kLrColumns) os << ",lr_" << group_name(g);
  os << ",grad_norm\n";
}

void write_metrics_row(std::ostream& os, const char* stage,
                       const StepRecord& rec) {
  os << rec.step << ',' << stage << ',' << fmt(rec.loss);
  for (Group g : kLrColumns) {
    auto it = rec.lr.find(g);
    os << ',' << fmt(it == rec.lr.end() ? 0.0 : it->second);
  }
  os << ',' << fmt(rec.grad_norm) << '\n';
}

StageResult run_stage(ModelBundle& bundle, const Tokenizer& tok,
                      const StageConfig& cfg, const Datasets& data,
                      AdamW& opt, std::ostream* metrics,
                      std::int64_t start_step, std::int64_t stop_step) {
  if (cfg.batch_size <= 0) {
    throw ConfigError(std::string("stage '") + stage_name(cfg.stage) +
                      "': batch_size must be positive");
  }
  apply_stage_trainability(cfg.stage, bundle.params());
  const bool uses_pairs = cfg.stage == Stage::kVkaPretrain ||
                          cfg.stage == Stage::kVkaAlign;
  const bool uses_captions = cfg.stage == Stage::kMlpCaption;
  const std::size_t n = uses_pairs      ? data.pairs.size()
                        : uses_captions ? data.captions.size()
                                        : data.train.size();
  if (n == 0) {
    throw DegenerateBatchError(std::string("stage '") +
                               stage_name(cfg.stage) + "': empty dataset");
  }
  std::int64_t end_step = cfg.steps;
  if (stop_step >= 0 && stop_step < end_step) end_step = stop_step;
  StageResult res;
  for (std::int64_t step = start_step; step < end_step; ++step) {
    const double factor =
        cosine_lr(step, cfg.steps, cfg.warmup_steps, 1.0, 0.0);
    std::map<Group, double> lrs;
    for (const auto& [g, base] : cfg.group_lr) lrs[g] = base * factor;

    Tensor loss;
    if (uses_pairs || uses_captions) {
      const auto& ds = uses_pairs ? data.pairs : data.captions;
      std::vector<const KnowledgePair*> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int j = 0; j < cfg.batch_size; ++j) {
        batch.push_back(&ds[batch_index(cfg.seed, step, j, n)]);
      }
      if (cfg.stage == Stage::kVkaPretrain) {
        loss = bundle.vka_pretrain_loss(batch, tok, cfg.reduction);
      } else if (cfg.stage == Stage::kVkaAlign) {
        loss = bundle.vka_align_loss(batch, tok, cfg.reduction);
      } else {
        loss = bundle.caption_loss(batch, tok, cfg.reduction);
      }
    } else {
      std::vector<const InstructionSample*> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int j = 0; j < cfg.batch_size; ++j) {
        batch.push_back(&data.train[batch_index(cfg.seed, step, j, n)]);
      }
      loss = bundle.instruction_loss(batch, tok, cfg.reduction);
    }

    const double loss_v = loss.value();
    if (!std::isfinite(loss_v)) {
      throw TrainingAbort(std::string("stage '") + stage_name(cfg.stage) +
                          "': non-finite loss at step " +
                          std::to_string(step));
    }
    backward(loss);
    const double gnorm = clip_global_norm(bundle.params(), cfg.clip_norm);
    opt.step(bundle.params(), lrs);

    StepRecord rec{step, loss_v, gnorm, lrs};
    if (metrics) write_metrics_row(*metrics, stage_name(cfg.stage), rec);
    res.loss_trace.push_back(loss_v);
    res.records.push_back(std::move(rec));
  }
  return res;
}

std::string normalize_answer(const std::string& s) {
  std::string out;
  bool in_space = true;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

EvalResult evaluate(const ModelBundle& bundle, const Tokenizer& tok,
                    const std::vector<InstructionSample>& samples,
                    int max_new_tokens, int limit) {
  EvalResult r;
  for (Attr a : kAllAttrs) r.rows.push_back(EvalRow{attr_name(a), 0, 0});
  std::size_t count = samples.size();
  if (limit > 0 && static_cast<std::size_t>(limit) < count) {
    count = static_cast<std::size_t>(limit);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const InstructionSample& s = samples[i];
    const std::string got = normalize_answer(
        bundle.generate_answer(s.image, s.question, tok, max_new_tokens));
    const bool ok = got == normalize_answer(s.answer);
    EvalRow& row = r.rows[static_cast<std::size_t>(s.category)];
    row.n += 1;
    row.correct += ok;
    r.n += 1;
    r.correct += ok;
  }
  return r;
}

std::string eval_csv(const EvalResult& r) {
  std::string out = "category,n,accuracy\n";
  for (const EvalRow& row : r.rows) {
    out += row.category + ',' + std::to_string(row.n) + ',';
    out += row.n == 0 ? "n/a" : fmt(static_cast<double>(row.correct) / row.n);
    out += '\n';
  }
  out += "all," + std::to_string(r.n) + ',';
  out += r.n == 0 ? "n/a" : fmt(r.accuracy());
  out += '\n';
  return out;
}

SweepResult ablation_sweep(const RunConfig& cfg, const Tokenizer& tok,
                           const Datasets& data,
                           const std::string& stage2_ckpt,
                           const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  SweepResult out;
  const std::vector<Group> shared = {Group::kVision, Group::kMlp, Group::kVka,
                                     Group::kHostLm};
  for (bool use_vka : {true, false}) {
    for (int ld : {0, 1, 2, 4}) {
      RunConfig c = cfg;
      c.model.with_vka = use_vka;
      c.fka.per_layer_len = ld;
      ModelBundle bundle(
          make_bundle_config(c, tok.vocab_size(), tok.knowledge_prompt_ids()));
      load_checkpoint_groups(stage2_ckpt, bundle.params(), shared);
      AdamW::Hyper hyper;
      hyper.weight_decay = c.train.weight_decay;
      AdamW opt(hyper);
      const StageConfig sc = stage_config_from(c, Stage::kInstructionTune);
      const std::string cell = std::string("vka") + (use_vka ? "1" : "0") +
                               "_ld" + std::to_string(ld);
      std::ofstream mf(out_dir + "/stage3_" + cell + ".csv");
      write_metrics_header(mf);
      StageResult sr = run_stage(bundle, tok, sc, data, opt, &mf);
      SweepCell row;
      row.use_vka = use_vka;
      row.ld = ld;
      row.final_loss = sr.loss_trace.empty() ? 0.0 : sr.loss_trace.back();
      row.held_in_accuracy =
          evaluate(bundle, tok, data.train, cfg.eval.max_new_tokens,
                   cfg.eval.limit)
              .accuracy();
      row.held_out_accuracy =
          evaluate(bundle, tok, data.held_out, cfg.eval.max_new_tokens,
                   cfg.eval.limit)
              .accuracy();
      out.cells.push_back(row);
    }
  }
  std::ofstream sf(out_dir + "/sweep.csv");
  sf << sweep_csv(out);
  return out;
}

std::string sweep_csv(const SweepResult& r) {
  std::string out = "use_vka,ld,final_loss,held_in_accuracy,held_out_accuracy\n";
  for (const SweepCell& c : r.cells) {
    out += std::string(c.use_vka ? "1" : "0") + ',' + std::to_string(c.ld) +
           ',' + fmt(c.final_loss) + ',' + fmt(c.held_in_accuracy) + ',' +
           fmt(c.held_out_accuracy) + '\n';
  }
  return out;
}

}  // namespace cvlm

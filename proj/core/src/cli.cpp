// SPDX-License-Identifier: Apache-2.0
#include "cvlm/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cvlm/checkpoint.hpp"
#include "cvlm/data.hpp"
#include "cvlm/error.hpp"
#include "cvlm/gradcheck.hpp"
#include "cvlm/rng.hpp"
#include "cvlm/training.hpp"

namespace cvlm {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* cfg = cmd->add_option("--config", c.config_path,
                              "run configuration file (TOML subset)");
  if (config_required) cfg->required();
  cmd->add_option("--out", c.out, "output directory");
  c.seed_opt = cmd->add_option("--seed", c.seed, "master seed override");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{}
                                        : load_run_config(c.config_path);
  if (c.seed_opt && c.seed_opt->count() > 0) cfg.seed = c.seed;
  return cfg;
}

std::string data_file(const RunConfig& cfg, const char* name) {
  return (fs::path(cfg.paths.data_dir) / name).string();
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) {
    throw DependencyError("missing dataset file '" + path +
                          "'; run gen-data first");
  }
}

Datasets load_datasets(const RunConfig& cfg, bool pairs, bool instructions,
                       bool captions) {
  Datasets d;
  if (pairs) {
    const std::string p = data_file(cfg, "pairs.jsonl");
    require_file(p);
    d.pairs = load_jsonl_pairs(p);
  }
  if (instructions) {
    const std::string tr = data_file(cfg, "instructions_train.jsonl");
    const std::string ho = data_file(cfg, "instructions_heldout.jsonl");
    require_file(tr);
    require_file(ho);
    d.train = load_jsonl_instructions(tr);
    d.held_out = load_jsonl_instructions(ho);
  }
  if (captions) {
    const std::string p = data_file(cfg, "captions.jsonl");
    require_file(p);
    d.captions = load_jsonl_pairs(p);
  }
  return d;
}

Tokenizer make_tokenizer(const RunConfig& cfg) {
  return Tokenizer::build(gen_world(cfg.seed, make_world_config(cfg)));
}

ModelBundle make_bundle(const RunConfig& cfg, const Tokenizer& tok) {
  return ModelBundle(
      make_bundle_config(cfg, tok.vocab_size(), tok.knowledge_prompt_ids()));
}

// Run-directory plumbing: resolved config echo + append-mode metrics CSV.
struct RunDir {
  fs::path dir;
  std::ofstream metrics;

  RunDir(const std::string& out, const RunConfig& cfg) : dir(out) {
    fs::create_directories(dir);
    std::ofstream echo(dir / "config.resolved.toml");
    echo << render_run_config(cfg);
    const fs::path mpath = dir / "metrics.csv";
    const bool fresh = !fs::exists(mpath) || fs::file_size(mpath) == 0;
    metrics.open(mpath, std::ios::app);
    if (fresh) write_metrics_header(metrics);
  }

  void write_summary(const nlohmann::json& j) {
    std::ofstream f(dir / "summary.json");
    f << j.dump(2) << "\n";
  }
};

std::string default_out(const char* cmd) {
  return (fs::path("runs") / cmd).string();
}

CheckpointMeta base_meta(const RunConfig& cfg, Stage stage,
                         std::int64_t step) {
  CheckpointMeta meta;
  meta.stage = stage_name(stage);
  meta.step = step;
  meta.config_json = run_config_json(cfg);
  return meta;
}

// Shared flow for the three training subcommands plus the optional MLP
// warm-up inside finetune.
struct TrainFlow {
  Common common;
  std::string resume_path;
  std::string from_path;
  int steps_override = 0;
  std::int64_t stop_after = -1;
};

int run_training_command(const char* cmd_name, Stage stage, TrainFlow& flow,
                         bool merge_lora_after, int ld_override,
                         bool no_vka) {
  RunConfig cfg = resolve_config(flow.common);
  if (flow.steps_override > 0) {
    switch (stage) {
      case Stage::kVkaPretrain: cfg.stage1.steps = flow.steps_override; break;
      case Stage::kVkaAlign: cfg.stage2.steps = flow.steps_override; break;
      case Stage::kInstructionTune:
        cfg.stage3.steps = flow.steps_override;
        break;
      case Stage::kMlpCaption:
        cfg.stage3.mlp_warmup_steps = flow.steps_override;
        break;
    }
  }
  if (ld_override >= 0) cfg.fka.per_layer_len = ld_override;
  if (no_vka) cfg.model.with_vka = false;

  const Tokenizer tok = make_tokenizer(cfg);
  const bool needs_pairs = stage == Stage::kVkaPretrain ||
                           stage == Stage::kVkaAlign;
  const bool needs_instr = stage == Stage::kInstructionTune;
  const bool warmup_requested =
      stage == Stage::kInstructionTune && cfg.stage3.mlp_warmup_steps > 0;
  Datasets data = load_datasets(cfg, needs_pairs, needs_instr,
                                warmup_requested);
  ModelBundle bundle = make_bundle(cfg, tok);
  AdamW::Hyper hyper;
  hyper.weight_decay = cfg.train.weight_decay;
  AdamW opt(hyper);

  std::int64_t start_step = 0;
  bool resumed = false;
  if (!flow.resume_path.empty()) {
    CheckpointMeta meta = load_checkpoint(flow.resume_path, bundle.params(),
                                          &opt);
    if (meta.stage != stage_name(stage)) {
      throw ConfigError("cannot resume " + std::string(stage_name(stage)) +
                        " from a '" + meta.stage + "' checkpoint");
    }
    if (meta.lora_merged) {
      throw ConfigError(
          "checkpoint has merged adapters; further adapter training would "
          "double-count them");
    }
    start_step = meta.step;
    resumed = true;
  } else if (!flow.from_path.empty()) {
    if (stage == Stage::kVkaAlign) {
      load_checkpoint(flow.from_path, bundle.params(), nullptr);
    } else {
      // Stage 3 may resize the distiller; carry the shared groups only.
      load_checkpoint_groups(flow.from_path, bundle.params(),
                             {Group::kVision, Group::kMlp, Group::kVka,
                              Group::kHostLm});
    }
  } else if (stage != Stage::kVkaPretrain) {
    throw DependencyError(std::string(stage_name(stage)) +
                          " needs --from <prior-stage checkpoint> or "
                          "--resume");
  }

  const std::string out =
      flow.common.out.empty() ? default_out(cmd_name) : flow.common.out;
  RunDir run(out, cfg);

  // Optional captioning warm-up before instruction tuning.
  if (warmup_requested && !resumed) {
    StageConfig wsc = stage_config_from(cfg, Stage::kMlpCaption);
    run_stage(bundle, tok, wsc, data, opt, &run.metrics);
    opt = AdamW(hyper);  // fresh moments for the main stage
  }

  StageConfig sc = stage_config_from(cfg, stage);
  StageResult res = run_stage(bundle, tok, sc, data, opt, &run.metrics,
                              start_step, flow.stop_after);
  const std::int64_t end_step =
      flow.stop_after >= 0 && flow.stop_after < sc.steps ? flow.stop_after
                                                         : sc.steps;

  CheckpointMeta meta = base_meta(cfg, stage, end_step);
  if (merge_lora_after) {
    bundle.host().merge_lora();
    meta.lora_merged = true;
  }
  const std::string ckpt =
      (run.dir / (std::string(stage_name(stage)) + ".ckpt")).string();
  save_checkpoint(ckpt, bundle.params(), meta, &opt);

  nlohmann::json summary;
  summary["command"] = cmd_name;
  summary["stage"] = stage_name(stage);
  summary["steps_executed"] = static_cast<std::int64_t>(
      res.loss_trace.size());
  summary["end_step"] = end_step;
  summary["final_loss"] =
      res.loss_trace.empty() ? 0.0 : res.loss_trace.back();
  summary["checkpoint"] = ckpt;
  summary["seed"] = cfg.seed;
  run.write_summary(summary);
  std::cout << stage_name(stage) << ": " << res.loss_trace.size()
            << " steps, final loss "
            << (res.loss_trace.empty() ? 0.0 : res.loss_trace.back())
            << ", checkpoint " << ckpt << "\n";
  return 0;
}

int run_gen_data(Common& common) {
  RunConfig cfg = resolve_config(common);
  const std::string out =
      common.out.empty() ? cfg.paths.data_dir : common.out;
  fs::create_directories(out);
  const World world = gen_world(cfg.seed, make_world_config(cfg));
  const std::vector<KnowledgePair> pairs = make_knowledge_pairs(
      world, cfg.world.renders_per_entity, cfg.world.layout_seed);
  const InstructionSplits splits = make_instruction_set(
      world, cfg.world.split_seed, cfg.world.renders_per_combo);
  std::vector<KnowledgePair> captions;
  const std::uint64_t caption_seed =
      mix_seed(cfg.world.layout_seed, hash_str("captions"));
  for (std::size_t i = 0; i < world.entities.size(); ++i) {
    KnowledgePair kp;
    kp.image = render_image(world, static_cast<int>(i), caption_seed);
    kp.knowledge = caption_text(world.entities[i]);
    captions.push_back(std::move(kp));
  }
  const auto path = [&out](const char* name) {
    return (fs::path(out) / name).string();
  };
  save_jsonl_pairs(path("pairs.jsonl"), pairs);
  save_jsonl_instructions(path("instructions_train.jsonl"), splits.train);
  save_jsonl_instructions(path("instructions_heldout.jsonl"),
                          splits.held_out);
  save_jsonl_pairs(path("captions.jsonl"), captions);
  std::ofstream echo(fs::path(out) / "config.resolved.toml");
  echo << render_run_config(cfg);
  nlohmann::json summary;
  summary["command"] = "gen-data";
  summary["entities"] = world.entities.size();
  summary["pairs"] = pairs.size();
  summary["instructions_train"] = splits.train.size();
  summary["instructions_heldout"] = splits.held_out.size();
  summary["captions"] = captions.size();
  summary["seed"] = cfg.seed;
  std::ofstream sf(fs::path(out) / "summary.json");
  sf << summary.dump(2) << "\n";
  std::cout << "gen-data: " << pairs.size() << " pairs, "
            << splits.train.size() << " train / " << splits.held_out.size()
            << " held-out instructions -> " << out << "\n";
  return 0;
}

int run_evaluate(Common& common, const std::string& from,
                 const std::string& split, int ld_override, bool no_vka) {
  RunConfig cfg = resolve_config(common);
  if (ld_override >= 0) cfg.fka.per_layer_len = ld_override;
  if (no_vka) cfg.model.with_vka = false;
  const Tokenizer tok = make_tokenizer(cfg);
  Datasets data = load_datasets(cfg, false, true, false);
  ModelBundle bundle = make_bundle(cfg, tok);
  load_checkpoint(from, bundle.params(), nullptr);
  const std::string out =
      common.out.empty() ? default_out("evaluate") : common.out;
  fs::create_directories(out);
  std::ofstream echo(fs::path(out) / "config.resolved.toml");
  echo << render_run_config(cfg);
  nlohmann::json summary;
  summary["command"] = "evaluate";
  summary["checkpoint"] = from;
  summary["seed"] = cfg.seed;
  const bool do_in = split == "heldin" || split == "both";
  const bool do_out = split == "heldout" || split == "both";
  if (!do_in && !do_out) {
    throw ConfigError("--split must be heldin, heldout, or both");
  }
  auto run_split = [&](const char* name,
                       const std::vector<InstructionSample>& samples) {
    const EvalResult r =
        evaluate(bundle, tok, samples, cfg.eval.max_new_tokens,
                 cfg.eval.limit);
    std::ofstream f(fs::path(out) / (std::string("eval_") + name + ".csv"));
    f << eval_csv(r);
    summary[std::string("accuracy_") + name] = r.accuracy();
    summary[std::string("n_") + name] = r.n;
    std::cout << "evaluate[" << name << "]: " << r.correct << "/" << r.n
              << " = " << r.accuracy() << "\n";
  };
  if (do_in) run_split("heldin", data.train);
  if (do_out) run_split("heldout", data.held_out);
  std::ofstream sf(fs::path(out) / "summary.json");
  sf << summary.dump(2) << "\n";
  return 0;
}

int run_sweep(Common& common, const std::string& from) {
  RunConfig cfg = resolve_config(common);
  const Tokenizer tok = make_tokenizer(cfg);
  Datasets data = load_datasets(cfg, false, true, false);
  const std::string out =
      common.out.empty() ? default_out("sweep") : common.out;
  fs::create_directories(out);
  std::ofstream echo(fs::path(out) / "config.resolved.toml");
  echo << render_run_config(cfg);
  const SweepResult r = ablation_sweep(cfg, tok, data, from, out);
  nlohmann::json summary;
  summary["command"] = "sweep";
  summary["seed"] = cfg.seed;
  nlohmann::json cells = nlohmann::json::array();
  for (const SweepCell& c : r.cells) {
    cells.push_back({{"use_vka", c.use_vka},
                     {"ld", c.ld},
                     {"final_loss", c.final_loss},
                     {"held_in_accuracy", c.held_in_accuracy},
                     {"held_out_accuracy", c.held_out_accuracy}});
  }
  summary["cells"] = cells;
  std::ofstream sf(fs::path(out) / "summary.json");
  sf << summary.dump(2) << "\n";
  std::cout << "sweep: " << r.cells.size() << " cells -> " << out
            << "/sweep.csv\n";
  return 0;
}

int run_gradcheck(Common& common) {
  RunConfig cfg = resolve_config(common);
  const std::vector<ModuleCheck> checks = gradcheck_suite(cfg.seed);
  for (const ModuleCheck& c : checks) {
    std::cout << c.name << ": max rel err " << c.result.max_rel_err << " ("
              << c.result.n_checked << " elements";
    if (!c.result.worst_param.empty()) {
      std::cout << ", worst " << c.result.worst_param;
    }
    std::cout << ")\n";
  }
  std::cout << "suite max: " << gradcheck_suite_max(checks) << "\n";
  return 0;
}

int run_inspect(const std::string& path) {
  const CheckpointInfo info = inspect_checkpoint(path);
  std::cout << "version: " << info.version << "\n"
            << "stage: " << info.meta.stage << "\n"
            << "step: " << info.meta.step << "\n"
            << "lora_merged: " << (info.meta.lora_merged ? "true" : "false")
            << "\n"
            << "optimizer_steps: " << info.meta.adam_t << "\n"
            << "tensors: " << info.tensors.size() << "\n";
  for (const TensorInfo& t : info.tensors) {
    std::cout << "  " << t.name << "  "
              << (t.dtype == 0 ? "f64" : "f32") << "  [";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
      if (i) std::cout << ", ";
      std::cout << t.shape[i];
    }
    std::cout << "]\n";
  }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"toy vision-language pipeline with knowledge alignment"};
  app.require_subcommand(1);

  Common gen_common;
  auto* gen = app.add_subcommand("gen-data",
                                 "generate the synthetic datasets");
  add_common(gen, gen_common, true);

  TrainFlow pre_flow;
  auto* pre = app.add_subcommand("pretrain-vka",
                                 "stage 1: aligner language pretraining");
  add_common(pre, pre_flow.common, true);
  pre->add_option("--resume", pre_flow.resume_path,
                  "continue from a checkpoint of this stage");
  pre->add_option("--steps", pre_flow.steps_override, "override step count");
  pre->add_option("--stop-after", pre_flow.stop_after,
                  "stop after this step (schedule still spans all steps)");

  TrainFlow align_flow;
  auto* align = app.add_subcommand("align-vka",
                                   "stage 2: knowledge-token alignment");
  add_common(align, align_flow.common, true);
  align->add_option("--from", align_flow.from_path, "stage-1 checkpoint");
  align->add_option("--resume", align_flow.resume_path,
                    "continue from a checkpoint of this stage");
  align->add_option("--steps", align_flow.steps_override,
                    "override step count");
  align->add_option("--stop-after", align_flow.stop_after,
                    "stop after this step");

  TrainFlow fine_flow;
  int fine_ld = -1;
  bool fine_no_vka = false;
  bool fine_merge = false;
  auto* fine = app.add_subcommand("finetune",
                                  "stage 3: instruction tuning");
  add_common(fine, fine_flow.common, true);
  fine->add_option("--from", fine_flow.from_path, "stage-2 checkpoint");
  fine->add_option("--resume", fine_flow.resume_path,
                   "continue from a checkpoint of this stage");
  fine->add_option("--steps", fine_flow.steps_override,
                   "override step count");
  fine->add_option("--stop-after", fine_flow.stop_after,
                   "stop after this step");
  fine->add_option("--ld", fine_ld, "injected rows per host layer");
  fine->add_flag("--no-vka", fine_no_vka, "drop the knowledge tokens");
  fine->add_flag("--merge-lora", fine_merge,
                 "fold adapters into the host weights before saving");

  Common eval_common;
  std::string eval_from, eval_split = "both";
  int eval_ld = -1;
  bool eval_no_vka = false;
  auto* eval = app.add_subcommand("evaluate", "exact-match QA accuracy");
  add_common(eval, eval_common, true);
  eval->add_option("--from", eval_from, "stage-3 checkpoint")->required();
  eval->add_option("--split", eval_split, "heldin, heldout, or both");
  eval->add_option("--ld", eval_ld, "injected rows per host layer");
  eval->add_flag("--no-vka", eval_no_vka, "drop the knowledge tokens");

  Common sweep_common;
  std::string sweep_from;
  auto* sweep = app.add_subcommand("sweep",
                                   "stage-3 grid over use_vka x LD");
  add_common(sweep, sweep_common, true);
  sweep->add_option("--from", sweep_from, "stage-2 checkpoint")->required();

  Common gc_common;
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference gradient suite");
  add_common(gc, gc_common, false);

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint",
                                     "list checkpoint contents");
  inspect->add_option("path", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_common);
    if (pre->parsed()) {
      return run_training_command("pretrain-vka", Stage::kVkaPretrain,
                                  pre_flow, false, -1, false);
    }
    if (align->parsed()) {
      return run_training_command("align-vka", Stage::kVkaAlign, align_flow,
                                  false, -1, false);
    }
    if (fine->parsed()) {
      return run_training_command("finetune", Stage::kInstructionTune,
                                  fine_flow, fine_merge, fine_ld,
                                  fine_no_vka);
    }
    if (eval->parsed()) {
      return run_evaluate(eval_common, eval_from, eval_split, eval_ld,
                          eval_no_vka);
    }
    if (sweep->parsed()) return run_sweep(sweep_common, sweep_from);
    if (gc->parsed()) return run_gradcheck(gc_common);
    if (inspect->parsed()) return run_inspect(inspect_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace cvlm

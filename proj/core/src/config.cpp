// SPDX-License-Identifier: Apache-2.0
#include "cvlm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

#include "cvlm/error.hpp"

namespace cvlm {

namespace {

enum class Kind { kInt, kU64, kDouble, kBool, kString };

struct Field {
  std::string section;  // "" = top level
  std::string key;
  Kind kind;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& raw,
                            const char* want) {
  throw ConfigError("config: key '" + key + "' expects " + want + ", got '" +
                    raw + "'");
}

long long to_int(const std::string& key, const std::string& raw) {
  long long v = 0;
  const char* b = raw.data();
  const char* e = raw.data() + raw.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) bad_value(key, raw, "an integer");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& raw) {
  std::uint64_t v = 0;
  const char* b = raw.data();
  const char* e = raw.data() + raw.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) {
    bad_value(key, raw, "a non-negative integer");
  }
  return v;
}

double to_double(const std::string& key, const std::string& raw) {
  double v = 0.0;
  const char* b = raw.data();
  const char* e = raw.data() + raw.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) bad_value(key, raw, "a number");
  return v;
}

bool to_bool(const std::string& key, const std::string& raw) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  bad_value(key, raw, "true or false");
}

std::string to_str(const std::string& key, const std::string& raw) {
  if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"' ||
      raw.find('"', 1) != raw.size() - 1) {
    bad_value(key, raw, "a double-quoted string");
  }
  return raw.substr(1, raw.size() - 2);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

#define FIELD_INT(sec, name, ref)                                         \
  {sec, name, Kind::kInt,                                                 \
   [](RunConfig& c, const std::string& raw) {                             \
     c.ref = static_cast<int>(to_int(sec "." name, raw));                 \
   },                                                                     \
   [](const RunConfig& c) { return std::to_string(c.ref); }}
#define FIELD_U64(sec, name, ref)                                         \
  {sec, name, Kind::kU64,                                                 \
   [](RunConfig& c, const std::string& raw) {                             \
     c.ref = to_u64(sec "." name, raw);                                   \
   },                                                                     \
   [](const RunConfig& c) { return std::to_string(c.ref); }}
#define FIELD_DBL(sec, name, ref)                                         \
  {sec, name, Kind::kDouble,                                              \
   [](RunConfig& c, const std::string& raw) {                             \
     c.ref = to_double(sec "." name, raw);                                \
   },                                                                     \
   [](const RunConfig& c) { return fmt_double(c.ref); }}
#define FIELD_BOOL(sec, name, ref)                                        \
  {sec, name, Kind::kBool,                                                \
   [](RunConfig& c, const std::string& raw) {                             \
     c.ref = to_bool(sec "." name, raw);                                  \
   },                                                                     \
   [](const RunConfig& c) { return c.ref ? "true" : "false"; }}
#define FIELD_STR(sec, name, ref)                                         \
  {sec, name, Kind::kString,                                              \
   [](RunConfig& c, const std::string& raw) {                             \
     c.ref = to_str(sec "." name, raw);                                   \
   },                                                                     \
   [](const RunConfig& c) { return "\"" + c.ref + "\""; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FIELD_U64("", "seed", seed),
      FIELD_INT("world", "n_entities", world.n_entities),
      FIELD_INT("world", "n_makers", world.n_makers),
      FIELD_INT("world", "n_origins", world.n_origins),
      FIELD_INT("world", "n_categories", world.n_categories),
      FIELD_INT("world", "n_names", world.n_names),
      FIELD_INT("world", "renders_per_entity", world.renders_per_entity),
      FIELD_INT("world", "renders_per_combo", world.renders_per_combo),
      FIELD_U64("world", "layout_seed", world.layout_seed),
      FIELD_U64("world", "split_seed", world.split_seed),
      FIELD_INT("vision", "height", vision.height),
      FIELD_INT("vision", "width", vision.width),
      FIELD_INT("vision", "channels", vision.channels),
      FIELD_INT("vision", "patch", vision.patch),
      FIELD_INT("vision", "d_v", vision.d_v),
      FIELD_INT("vka", "d_k", vka.d_k),
      FIELD_INT("vka", "n_blocks", vka.n_blocks),
      FIELD_INT("vka", "n_heads", vka.n_heads),
      FIELD_INT("vka", "n_query_tokens", vka.n_query_tokens),
      FIELD_INT("vka", "max_seq_len", vka.max_seq_len),
      FIELD_INT("vka", "ffn_mult", vka.ffn_mult),
      FIELD_INT("fka", "n_layers", fka.n_layers),
      FIELD_INT("fka", "n_heads", fka.n_heads),
      FIELD_INT("fka", "per_layer_len", fka.per_layer_len),
      FIELD_INT("fka", "ffn_mult", fka.ffn_mult),
      FIELD_INT("hostlm", "d_l", hostlm.d_l),
      FIELD_INT("hostlm", "n_layers", hostlm.n_layers),
      FIELD_INT("hostlm", "n_heads", hostlm.n_heads),
      FIELD_INT("hostlm", "max_seq_len", hostlm.max_seq_len),
      FIELD_INT("hostlm", "ffn_mult", hostlm.ffn_mult),
      FIELD_INT("hostlm", "lora_rank", hostlm.lora_rank),
      FIELD_INT("hostlm", "lora_alpha", hostlm.lora_alpha),
      FIELD_BOOL("model", "with_vka", model.with_vka),
      FIELD_BOOL("model", "with_fka", model.with_fka),
      FIELD_BOOL("model", "with_lora", model.with_lora),
      FIELD_BOOL("model", "align_with_image_tokens",
                 model.align_with_image_tokens),
      FIELD_STR("model", "injection_mode", model.injection_mode),
      FIELD_INT("model", "region_k", model.region_k),
      FIELD_STR("train", "loss_reduction", train.loss_reduction),
      FIELD_DBL("train", "warmup_frac", train.warmup_frac),
      FIELD_DBL("train", "weight_decay", train.weight_decay),
      FIELD_DBL("train", "clip_norm", train.clip_norm),
      FIELD_INT("stage1", "steps", stage1.steps),
      FIELD_INT("stage1", "batch_size", stage1.batch_size),
      FIELD_DBL("stage1", "lr", stage1.lr),
      FIELD_INT("stage2", "steps", stage2.steps),
      FIELD_INT("stage2", "batch_size", stage2.batch_size),
      FIELD_DBL("stage2", "lr", stage2.lr),
      FIELD_INT("stage3", "steps", stage3.steps),
      FIELD_INT("stage3", "batch_size", stage3.batch_size),
      FIELD_DBL("stage3", "lr_adapters", stage3.lr_adapters),
      FIELD_DBL("stage3", "lr_backbone", stage3.lr_backbone),
      FIELD_INT("stage3", "mlp_warmup_steps", stage3.mlp_warmup_steps),
      FIELD_DBL("stage3", "lr_mlp_warmup", stage3.lr_mlp_warmup),
      FIELD_INT("eval", "max_new_tokens", eval.max_new_tokens),
      FIELD_INT("eval", "limit", eval.limit),
      FIELD_STR("paths", "data_dir", paths.data_dir),
  };
  return table;
}

#undef FIELD_INT
#undef FIELD_U64
#undef FIELD_DBL
#undef FIELD_BOOL
#undef FIELD_STR

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Cuts a # comment that is not inside a quoted string.
std::string cut_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, const Field*> by_path;
  std::map<std::string, bool> known_sections;
  for (const Field& f : fields()) {
    by_path[f.section + "." + f.key] = &f;
    if (!f.section.empty()) known_sections[f.section] = true;
  }
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = strip(cut_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header '" + body + "'");
      }
      section = strip(body.substr(1, body.size() - 2));
      if (!known_sections.count(section)) {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + body + "'");
    }
    const std::string key = strip(body.substr(0, eq));
    const std::string raw = strip(body.substr(eq + 1));
    if (key.empty() || raw.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + body + "'");
    }
    auto it = by_path.find(section + "." + key);
    if (it == by_path.end()) {
      const std::string where =
          section.empty() ? "at top level" : "in [" + section + "]";
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": unknown key '" + key + "' " + where);
    }
    try {
      it->second->set(cfg, raw);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "# resolved run configuration\n";
  std::string section;
  bool first = true;
  for (const Field& f : fields()) {
    if (f.section != section || first) {
      if (!f.section.empty()) out << "\n[" << f.section << "]\n";
      section = f.section;
      first = false;
    }
    out << f.key << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

std::string run_config_json(const RunConfig& cfg) {
  nlohmann::json j;
  for (const Field& f : fields()) {
    nlohmann::json* slot =
        f.section.empty() ? &j[f.key] : &j[f.section][f.key];
    const std::string s = f.get(cfg);
    switch (f.kind) {
      case Kind::kInt: *slot = to_int(f.key, s); break;
      case Kind::kU64: *slot = to_u64(f.key, s); break;
      case Kind::kDouble: *slot = to_double(f.key, s); break;
      case Kind::kBool: *slot = s == "true"; break;
      case Kind::kString: *slot = s.substr(1, s.size() - 2); break;
    }
  }
  return j.dump();
}

Reduction reduction_from_name(const std::string& s) {
  if (s == "mean") return Reduction::kMean;
  if (s == "sum") return Reduction::kSum;
  throw ConfigError("config: loss_reduction must be \"mean\" or \"sum\", got \"" +
                    s + "\"");
}

InjectionMode injection_mode_from_name(const std::string& s) {
  if (s == "strip") return InjectionMode::kStrip;
  if (s == "accumulate") return InjectionMode::kAccumulate;
  throw ConfigError(
      "config: injection_mode must be \"strip\" or \"accumulate\", got \"" +
      s + "\"");
}

WorldConfig make_world_config(const RunConfig& cfg) {
  WorldConfig wc;
  wc.n_entities = cfg.world.n_entities;
  wc.n_makers = cfg.world.n_makers;
  wc.n_origins = cfg.world.n_origins;
  wc.n_categories = cfg.world.n_categories;
  wc.n_names = cfg.world.n_names;
  return wc;
}

BundleConfig make_bundle_config(const RunConfig& cfg, int vocab_size,
                                std::vector<int> prompt_token_ids) {
  BundleConfig bc;
  bc.seed = cfg.seed;
  bc.vision.height = cfg.vision.height;
  bc.vision.width = cfg.vision.width;
  bc.vision.channels = cfg.vision.channels;
  bc.vision.patch = cfg.vision.patch;
  bc.vision.d_v = cfg.vision.d_v;
  bc.vka.d_k = cfg.vka.d_k;
  bc.vka.n_blocks = cfg.vka.n_blocks;
  bc.vka.n_heads = cfg.vka.n_heads;
  bc.vka.vocab_size = vocab_size;
  bc.vka.n_query_tokens = cfg.vka.n_query_tokens;
  bc.vka.prompt_token_ids = std::move(prompt_token_ids);
  bc.vka.max_seq_len = cfg.vka.max_seq_len;
  bc.vka.ffn_mult = cfg.vka.ffn_mult;
  bc.vka.d_v = cfg.vision.d_v;
  bc.vka.d_l = cfg.hostlm.d_l;
  bc.fka.n_layers = cfg.fka.n_layers;
  bc.fka.n_heads = cfg.fka.n_heads;
  bc.fka.per_layer_len = cfg.fka.per_layer_len;
  bc.fka.n_host_layers = cfg.hostlm.n_layers;
  bc.fka.d_l = cfg.hostlm.d_l;
  bc.fka.ffn_mult = cfg.fka.ffn_mult;
  bc.host.d_l = cfg.hostlm.d_l;
  bc.host.n_layers = cfg.hostlm.n_layers;
  bc.host.n_heads = cfg.hostlm.n_heads;
  bc.host.vocab_size = vocab_size;
  bc.host.max_seq_len = cfg.hostlm.max_seq_len;
  bc.host.ffn_mult = cfg.hostlm.ffn_mult;
  bc.host.lora_rank = cfg.hostlm.lora_rank;
  bc.host.lora_alpha = cfg.hostlm.lora_alpha;
  bc.with_vka = cfg.model.with_vka;
  bc.with_fka = cfg.model.with_fka;
  bc.with_lora = cfg.model.with_lora;
  bc.align_with_image_tokens = cfg.model.align_with_image_tokens;
  bc.injection_mode = injection_mode_from_name(cfg.model.injection_mode);
  bc.region_k = cfg.model.region_k;
  return bc;
}

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#include "cvlm/data.hpp"

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cvlm {

namespace {

constexpr int kImgSize = 32;
constexpr int kImgChannels = 3;
constexpr int kQuadrant = kImgSize / 2;
constexpr double kBackground = 0.1;
constexpr double kSubjectIntensity = 1.0;
constexpr double kDistractorIntensity = 0.45;

const char* kMakerPool[] = {"acme",  "borel", "cobalt", "dyna",
                            "ember", "forge", "gale",   "helix"};
const char* kOriginPool[] = {"norland",  "estmore",  "westvale", "sudbrook",
                             "highfell", "lowmarsh", "redmoor",  "glenby"};
const char* kCategoryPool[] = {"plane", "boat", "car", "clock", "lamp",
                               "drone"};
const char* kNamePool[] = {"kestrel", "osprey", "falcon", "heron",
                           "swift",   "petrel", "avocet", "plover",
                           "siskin",  "linnet", "dunlin", "merlin",
                           "teal",    "wigeon", "gannet", "puffin"};

std::vector<std::string> take(const char* const* pool, int pool_size, int n,
                              const char* what) {
  if (n <= 0 || n > pool_size) {
    throw CapacityError(std::string("world: ") + what + " vocabulary size " +
                        std::to_string(n) + " outside [1," +
                        std::to_string(pool_size) + "]");
  }
  return std::vector<std::string>(pool, pool + n);
}

}  // namespace

const char* attr_name(Attr a) {
  switch (a) {
    case Attr::kMaker: return "maker";
    case Attr::kOrigin: return "origin";
    case Attr::kCategory: return "category";
    case Attr::kName: return "name";
  }
  return "?";
}

Attr attr_from_name(const std::string& s) {
  for (Attr a : kAllAttrs) {
    if (s == attr_name(a)) return a;
  }
  throw ParseError("unknown category '" + s + "'");
}

const char* question_for(Attr a) {
  switch (a) {
    case Attr::kMaker: return "who is the maker of this object?";
    case Attr::kOrigin: return "where does this object come from?";
    case Attr::kCategory: return "what is this object?";
    case Attr::kName: return "what is the name of this object?";
  }
  return "";
}

const std::string& Entity::attribute(Attr a) const {
  switch (a) {
    case Attr::kMaker: return maker;
    case Attr::kOrigin: return origin;
    case Attr::kCategory: return category;
    case Attr::kName: return name;
  }
  return maker;
}

std::uint64_t glyph_pixels(std::uint64_t glyph_seed) {
  Rng rng(glyph_seed);
  for (;;) {
    const std::uint64_t mask = rng.next_u64();
    const int pc = std::popcount(mask);
    if (pc >= 16 && pc <= 48) return mask;
  }
}

World gen_world(std::uint64_t seed, const WorldConfig& cfg) {
  World w;
  w.seed = seed;
  w.cfg = cfg;
  w.makers = take(kMakerPool, 8, cfg.n_makers, "maker");
  w.origins = take(kOriginPool, 8, cfg.n_origins, "origin");
  w.categories = take(kCategoryPool, 6, cfg.n_categories, "category");
  w.names = take(kNamePool, 16, cfg.n_names, "name");
  const std::uint64_t space = static_cast<std::uint64_t>(cfg.n_makers) *
                              cfg.n_origins * cfg.n_categories * cfg.n_names;
  if (cfg.n_entities <= 0 ||
      static_cast<std::uint64_t>(cfg.n_entities) > space) {
    throw CapacityError("world: " + std::to_string(cfg.n_entities) +
                        " entities do not fit the attribute space of " +
                        std::to_string(space));
  }

  Rng rng(mix_seed(seed, hash_str("world")));
  std::set<std::string> used_tuples;
  std::set<std::uint64_t> used_glyphs;
  w.entities.reserve(static_cast<std::size_t>(cfg.n_entities));
  for (int id = 0; id < cfg.n_entities; ++id) {
    Entity e;
    e.id = id;
    for (;;) {
      e.maker = w.makers[rng.below(w.makers.size())];
      e.origin = w.origins[rng.below(w.origins.size())];
      e.category = w.categories[rng.below(w.categories.size())];
      e.name = w.names[rng.below(w.names.size())];
      const std::string key =
          e.maker + "|" + e.origin + "|" + e.category + "|" + e.name;
      if (used_tuples.insert(key).second) break;
    }
    e.glyph_seed = mix_seed(mix_seed(seed, hash_str("glyph")),
                            static_cast<std::uint64_t>(id));
    while (!used_glyphs.insert(glyph_pixels(e.glyph_seed)).second) {
      e.glyph_seed = mix_seed(e.glyph_seed, 0x6a09e667f3bcc909ull);
    }
    w.entities.push_back(std::move(e));
  }
  return w;
}

namespace {

void draw_glyph(ImageGrid& img, std::uint64_t mask, int quadrant,
                double intensity) {
  const int r0 = (quadrant / 2) * kQuadrant;
  const int c0 = (quadrant % 2) * kQuadrant;
  for (int gr = 0; gr < 8; ++gr) {
    for (int gc = 0; gc < 8; ++gc) {
      if (!((mask >> (gr * 8 + gc)) & 1ull)) continue;
      for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) {
          for (int ch = 0; ch < kImgChannels; ++ch) {
            img.at(r0 + gr * 2 + dr, c0 + gc * 2 + dc, ch) = intensity;
          }
        }
      }
    }
  }
}

}  // namespace

ImageGrid render_image(const World& world, int entity_index,
                       std::uint64_t layout_seed, int max_distractors) {
  if (entity_index < 0 ||
      entity_index >= static_cast<int>(world.entities.size())) {
    throw BoundsError("render_image: entity index " +
                      std::to_string(entity_index) + " outside world of " +
                      std::to_string(world.entities.size()));
  }
  const Entity& subject = world.entities[entity_index];
  ImageGrid img;
  img.height = kImgSize;
  img.width = kImgSize;
  img.channels = kImgChannels;
  img.pixels.assign(
      static_cast<std::size_t>(kImgSize) * kImgSize * kImgChannels,
      kBackground);

  Rng rng(mix_seed(mix_seed(world.seed, layout_seed),
                   static_cast<std::uint64_t>(subject.id)));
  const int subject_quadrant = static_cast<int>(rng.below(4));
  draw_glyph(img, glyph_pixels(subject.glyph_seed), subject_quadrant,
             kSubjectIntensity);

  const int others = static_cast<int>(world.entities.size()) - 1;
  int n_dis = 0;
  if (max_distractors > 0) {
    n_dis = static_cast<int>(
        rng.below(static_cast<std::uint64_t>(std::min(max_distractors, 3)) +
                  1));
    n_dis = std::min(n_dis, others);
  }
  std::vector<int> free_quadrants;
  for (int q = 0; q < 4; ++q) {
    if (q != subject_quadrant) free_quadrants.push_back(q);
  }
  for (std::size_t i = free_quadrants.size(); i > 1; --i) {
    std::swap(free_quadrants[i - 1], free_quadrants[rng.below(i)]);
  }
  std::set<int> used_ids = {subject.id};
  for (int d = 0; d < n_dis; ++d) {
    int pick;
    do {
      pick = static_cast<int>(rng.below(world.entities.size()));
    } while (used_ids.count(pick));
    used_ids.insert(pick);
    draw_glyph(img, glyph_pixels(world.entities[pick].glyph_seed),
               free_quadrants[d], kDistractorIntensity);
  }
  return img;
}

std::string knowledge_text(const Entity& e) {
  return "the " + e.category + " " + e.name + " is made by " + e.maker +
         " from " + e.origin;
}

std::string caption_text(const Entity& e) {
  return "a " + e.category + " object";
}

Tokenizer Tokenizer::build(const World& world) {
  Tokenizer t;
  auto push = [&t](const std::string& w) {
    if (!t.index_.count(w)) {
      t.index_[w] = static_cast<int>(t.words_.size());
      t.words_.push_back(w);
    }
  };
  push("<pad>");
  push("<s>");
  push("</s>");
  push("<sep>");
  const char* fixed[] = {"the",  "associating", "knowledge", "of",   "this",
                         "image", "who",        "is",        "maker", "object",
                         "?",     "where",      "does",      "come",  "from",
                         "what",  "name",       "made",      "by",    "a"};
  for (const char* w : fixed) push(w);
  for (const auto& w : world.categories) push(w);
  for (const auto& w : world.names) push(w);
  for (const auto& w : world.makers) push(w);
  for (const auto& w : world.origins) push(w);
  return t;
}

int Tokenizer::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) {
    throw TokenizerError("unknown word '" + word + "'");
  }
  return it->second;
}

const std::string& Tokenizer::word(int i) const {
  if (i < 0 || i >= vocab_size()) {
    throw BoundsError("token id " + std::to_string(i) + " outside vocab of " +
                      std::to_string(vocab_size()));
  }
  return words_[static_cast<std::size_t>(i)];
}

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    if (tok.size() > 1 && tok.back() == '?') {
      out.push_back(id(tok.substr(0, tok.size() - 1)));
      out.push_back(id("?"));
    } else {
      out.push_back(id(tok));
    }
  }
  return out;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    const std::string& w = word(i);
    if (!out.empty() && w != "?") out += ' ';
    out += w;
  }
  return out;
}

std::vector<int> Tokenizer::knowledge_prompt_ids() const {
  std::vector<int> ids = {kBos};
  for (int t : tokenize("the associating knowledge of this image")) {
    ids.push_back(t);
  }
  return ids;
}

std::vector<KnowledgePair> make_knowledge_pairs(const World& world,
                                                int renders_per_entity,
                                                std::uint64_t layout_seed) {
  std::vector<KnowledgePair> pairs;
  pairs.reserve(world.entities.size() *
                static_cast<std::size_t>(renders_per_entity));
  for (const auto& e : world.entities) {
    for (int k = 0; k < renders_per_entity; ++k) {
      const std::uint64_t ls =
          mix_seed(mix_seed(layout_seed, static_cast<std::uint64_t>(e.id)),
                   static_cast<std::uint64_t>(k));
      pairs.push_back({render_image(world, e.id, ls), knowledge_text(e)});
    }
  }
  return pairs;
}

InstructionSplits make_instruction_set(const World& world,
                                       std::uint64_t split_seed,
                                       int renders_per_combo) {
  if (world.entities.empty()) {
    throw CapacityError("instruction split: world has no entities");
  }
  if (renders_per_combo < 1) {
    throw ConfigError("instruction split: renders_per_combo must be >= 1");
  }
  InstructionSplits out;
  Rng rot(mix_seed(world.seed, mix_seed(split_seed, hash_str("split"))));
  const int offset = static_cast<int>(rot.below(4));
  for (const auto& e : world.entities) {
    const Attr held = kAllAttrs[(static_cast<std::size_t>(e.id) + offset) % 4];
    std::vector<std::size_t> entity_train_idx;
    for (Attr a : kAllAttrs) {
      if (a == held) continue;
      for (int k = 0; k < renders_per_combo; ++k) {
        const std::uint64_t ls = mix_seed(
            mix_seed(mix_seed(split_seed, hash_str("train")),
                     static_cast<std::uint64_t>(e.id)),
            static_cast<std::uint64_t>(static_cast<int>(a)) * 1000 + k);
        entity_train_idx.push_back(out.train.size());
        out.train.push_back({render_image(world, e.id, ls), question_for(a),
                             e.attribute(a), a});
      }
    }
    std::uint64_t ls = mix_seed(mix_seed(split_seed, hash_str("heldout")),
                                static_cast<std::uint64_t>(e.id));
    ImageGrid img = render_image(world, e.id, ls);
    auto shared = [&out, &entity_train_idx](const ImageGrid& candidate) {
      for (std::size_t i : entity_train_idx) {
        if (out.train[i].image.pixels == candidate.pixels) return true;
      }
      return false;
    };
    while (shared(img)) {
      ls = mix_seed(ls, 0x9e3779b97f4a7c15ull);
      img = render_image(world, e.id, ls);
    }
    out.held_out.push_back(
        {std::move(img), question_for(held), e.attribute(held), held});
  }
  return out;
}

namespace {
const char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(data[i]) << 16;
    if (i + 1 < len) chunk |= static_cast<std::uint32_t>(data[i + 1]) << 8;
    if (i + 2 < len) chunk |= data[i + 2];
    out += kB64Alphabet[(chunk >> 18) & 63];
    out += kB64Alphabet[(chunk >> 12) & 63];
    out += i + 1 < len ? kB64Alphabet[(chunk >> 6) & 63] : '=';
    out += i + 2 < len ? kB64Alphabet[chunk & 63] : '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) {
    lut[static_cast<unsigned char>(kB64Alphabet[i])] = i;
  }
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = lut[static_cast<unsigned char>(c)];
    if (v < 0) throw ParseError("base64: invalid character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

namespace {

using nlohmann::json;

ImageGrid image_from_field(const std::string& value,
                           const std::filesystem::path& jsonl_dir) {
  const std::string prefix = "data:img0;base64,";
  if (value.rfind(prefix, 0) == 0) {
    auto bytes = base64_decode(value.substr(prefix.size()));
    return from_img0_bytes(bytes.data(), bytes.size());
  }
  std::filesystem::path p(value);
  if (p.is_relative()) p = jsonl_dir / p;
  return load_img0(p.string());
}

std::string require_string(const json& obj, const char* field, int line) {
  if (!obj.contains(field)) {
    throw ParseError("line " + std::to_string(line) + ": missing field '" +
                     field + "'");
  }
  if (!obj[field].is_string()) {
    throw ParseError("line " + std::to_string(line) + ": field '" + field +
                     "' is not a string");
  }
  return obj[field].get<std::string>();
}

template <typename Fn>
void for_each_jsonl_line(const std::string& path, Fn&& fn) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected a JSON object");
    }
    fn(obj, line_no);
  }
}

std::string inline_image(const ImageGrid& img) {
  const auto bytes = to_img0_bytes(img);
  return "data:img0;base64," + base64_encode(bytes.data(), bytes.size());
}

}  // namespace

void save_jsonl_pairs(const std::string& path,
                      const std::vector<KnowledgePair>& pairs) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open '" + path + "' for writing");
  for (const auto& p : pairs) {
    json obj;
    obj["image"] = inline_image(p.image);
    obj["knowledge"] = p.knowledge;
    f << obj.dump() << "\n";
  }
}

std::vector<KnowledgePair> load_jsonl_pairs(const std::string& path) {
  std::vector<KnowledgePair> out;
  const auto dir = std::filesystem::path(path).parent_path();
  for_each_jsonl_line(path, [&](const json& obj, int line) {
    KnowledgePair p;
    p.image = image_from_field(require_string(obj, "image", line), dir);
    p.knowledge = require_string(obj, "knowledge", line);
    out.push_back(std::move(p));
  });
  return out;
}

void save_jsonl_instructions(const std::string& path,
                             const std::vector<InstructionSample>& samples) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot open '" + path + "' for writing");
  for (const auto& s : samples) {
    json obj;
    obj["image"] = inline_image(s.image);
    obj["question"] = s.question;
    obj["answer"] = s.answer;
    obj["category"] = attr_name(s.category);
    f << obj.dump() << "\n";
  }
}

std::vector<InstructionSample> load_jsonl_instructions(
    const std::string& path) {
  std::vector<InstructionSample> out;
  const auto dir = std::filesystem::path(path).parent_path();
  for_each_jsonl_line(path, [&](const json& obj, int line) {
    InstructionSample s;
    s.image = image_from_field(require_string(obj, "image", line), dir);
    s.question = require_string(obj, "question", line);
    s.answer = require_string(obj, "answer", line);
    try {
      s.category = attr_from_name(require_string(obj, "category", line));
    } catch (const ParseError&) {
      throw ParseError("line " + std::to_string(line) +
                       ": unknown category value");
    }
    out.push_back(std::move(s));
  });
  return out;
}

}  // namespace cvlm

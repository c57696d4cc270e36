// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvlm/rng.hpp"
#include "cvlm/vision.hpp"

namespace cvlm {

// The four question categories; one attribute value per entity each.
enum class Attr : std::uint8_t { kMaker, kOrigin, kCategory, kName };
constexpr std::array<Attr, 4> kAllAttrs = {Attr::kMaker, Attr::kOrigin,
                                           Attr::kCategory, Attr::kName};
const char* attr_name(Attr a);
Attr attr_from_name(const std::string& s);

// Canonical question template for a category.
const char* question_for(Attr a);

struct Entity {
  int id = 0;
  std::string maker, origin, category, name;
  std::uint64_t glyph_seed = 0;

  const std::string& attribute(Attr a) const;
};

struct WorldConfig {
  int n_entities = 64;
  int n_makers = 8;
  int n_origins = 8;
  int n_categories = 6;
  int n_names = 16;
};

struct World {
  std::uint64_t seed = 0;
  WorldConfig cfg;
  std::vector<Entity> entities;
  std::vector<std::string> makers, origins, categories, names;
};

// Deterministic entity sampling without duplicate attribute tuples.
// CapacityError when n_entities exceeds the attribute-tuple space.
World gen_world(std::uint64_t seed, const WorldConfig& cfg = {});

// 8x8 glyph bitmap as a 64-bit mask, row-major from the top-left bit.
std::uint64_t glyph_pixels(std::uint64_t glyph_seed);

// Entity glyph in one quadrant (2x upscaled, intensity 1.0), up to
// max_distractors other entities' glyphs (intensity 0.45) in the remaining
// quadrants, uniform 0.1 background. Pure in (world, entity, layout_seed).
ImageGrid render_image(const World& world, int entity_index,
                       std::uint64_t layout_seed, int max_distractors = 3);

// "the <category> <name> is made by <maker> from <origin>"
std::string knowledge_text(const Entity& e);
// "a <category> object" (optional captioning pre-stage)
std::string caption_text(const Entity& e);

struct KnowledgePair {
  ImageGrid image;
  std::string knowledge;
};

struct InstructionSample {
  ImageGrid image;
  std::string question;
  std::string answer;
  Attr category = Attr::kMaker;
};

// Word-level closed-vocabulary tokenizer over the world's strings.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;

  static Tokenizer build(const World& world);

  int vocab_size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const;

  // Splits on spaces; '?' detaches as its own token. Unknown word is a hard
  // error (closed world).
  std::vector<int> tokenize(const std::string& text) const;
  // Inverse: words joined by spaces, '?' re-attaching to the left.
  std::string detokenize(const std::vector<int>& ids) const;

  // BOS followed by the lower-cased knowledge prompt words.
  std::vector<int> knowledge_prompt_ids() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

std::vector<KnowledgePair> make_knowledge_pairs(const World& world,
                                                int renders_per_entity,
                                                std::uint64_t layout_seed);

struct InstructionSplits {
  std::vector<InstructionSample> train;     // held-in combinations
  std::vector<InstructionSample> held_out;  // unseen entity-template combos
};

// One question category per entity is held out (balanced within +/-1 across
// categories); no image pixels are shared across the splits.
InstructionSplits make_instruction_set(const World& world,
                                       std::uint64_t split_seed,
                                       int renders_per_combo = 5);

std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// JSONL schemas: pairs {"image", "knowledge"}, instructions additionally
// {"question", "answer", "category"}. "image" is a raster-file path
// (relative to the JSONL file) or "data:img0;base64,..." inline.
void save_jsonl_pairs(const std::string& path,
                      const std::vector<KnowledgePair>& pairs);
std::vector<KnowledgePair> load_jsonl_pairs(const std::string& path);
void save_jsonl_instructions(const std::string& path,
                             const std::vector<InstructionSample>& samples);
std::vector<InstructionSample> load_jsonl_instructions(
    const std::string& path);

}  // namespace cvlm

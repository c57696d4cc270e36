// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"

#include "cvlm/data.hpp"

using namespace cvlm;

TEST_CASE("world generation is deterministic and duplicate-free") {
  WorldConfig cfg{16, 8, 8, 6, 16};
  World a = gen_world(42, cfg);
  World b = gen_world(42, cfg);
  REQUIRE(a.entities.size() == 16);
  std::set<std::tuple<std::string, std::string, std::string, std::string>>
      tuples;
  for (std::size_t i = 0; i < a.entities.size(); ++i) {
    const Entity& e = a.entities[i];
    CHECK(e.maker == b.entities[i].maker);
    CHECK(e.glyph_seed == b.entities[i].glyph_seed);
    tuples.insert({e.maker, e.origin, e.category, e.name});
  }
  CHECK(tuples.size() == a.entities.size());
  World c = gen_world(43, cfg);
  bool same = true;
  for (std::size_t i = 0; i < a.entities.size(); ++i) {
    same = same && a.entities[i].glyph_seed == c.entities[i].glyph_seed;
  }
  CHECK_FALSE(same);
}

TEST_CASE("world attribute pools have the configured sizes") {
  World w = gen_world(1, WorldConfig{8, 4, 5, 3, 9});
  CHECK(w.makers.size() == 4);
  CHECK(w.origins.size() == 5);
  CHECK(w.categories.size() == 3);
  CHECK(w.names.size() == 9);
  for (const Entity& e : w.entities) {
    CHECK(std::find(w.makers.begin(), w.makers.end(), e.maker) !=
          w.makers.end());
  }
}

TEST_CASE("entity capacity is bounded by the tuple space") {
  // 2*2*2*2 = 16 possible tuples.
  CHECK_THROWS_AS(gen_world(1, WorldConfig{17, 2, 2, 2, 2}), CapacityError);
  CHECK_NOTHROW(gen_world(1, WorldConfig{16, 2, 2, 2, 2}));
}

TEST_CASE("attribute accessor and names") {
  World w = gen_world(2, WorldConfig{4, 8, 8, 6, 16});
  const Entity& e = w.entities[0];
  CHECK(e.attribute(Attr::kMaker) == e.maker);
  CHECK(e.attribute(Attr::kOrigin) == e.origin);
  CHECK(e.attribute(Attr::kCategory) == e.category);
  CHECK(e.attribute(Attr::kName) == e.name);
  for (Attr a : kAllAttrs) {
    CHECK(attr_from_name(attr_name(a)) == a);
  }
  CHECK_THROWS_AS(attr_from_name("bogus"), ParseError);
}

TEST_CASE("glyphs are distinctive and mid-density") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 1; s <= 32; ++s) {
    const std::uint64_t g = glyph_pixels(s);
    const int bits = std::popcount(g);
    CHECK(bits >= 16);
    CHECK(bits <= 48);
    seen.insert(g);
  }
  CHECK(seen.size() == 32);
  CHECK(glyph_pixels(7) == glyph_pixels(7));
}

TEST_CASE("rendered images are deterministic in all inputs") {
  World w = gen_world(3, WorldConfig{8, 8, 8, 6, 16});
  ImageGrid a = render_image(w, 2, 5);
  ImageGrid b = render_image(w, 2, 5);
  CHECK(a.pixels == b.pixels);
  ImageGrid c = render_image(w, 2, 6);
  CHECK(a.pixels != c.pixels);  // layout seed moves distractors
  ImageGrid d = render_image(w, 3, 5);
  CHECK(a.pixels != d.pixels);  // different entity glyph
  CHECK_NOTHROW(a.validate());
  CHECK_THROWS_AS(render_image(w, 99, 5), BoundsError);
}

TEST_CASE("render puts the entity glyph at full intensity") {
  World w = gen_world(4, WorldConfig{8, 8, 8, 6, 16});
  ImageGrid img = render_image(w, 0, 9);
  double mx = 0.0;
  for (double p : img.pixels) mx = std::max(mx, p);
  CHECK(mx == doctest::Approx(1.0));
}

TEST_CASE("knowledge and caption text follow the fixed templates") {
  Entity e;
  e.maker = "acme";
  e.origin = "norland";
  e.category = "drone";
  e.name = "vex";
  CHECK(knowledge_text(e) == "the drone vex is made by acme from norland");
  CHECK(caption_text(e) == "a drone object");
}

TEST_CASE("question templates end with a question mark") {
  for (Attr a : kAllAttrs) {
    std::string q = question_for(a);
    REQUIRE(!q.empty());
    CHECK(q.back() == '?');
  }
}

TEST_CASE("tokenizer round-trips world text") {
  World w = gen_world(5, WorldConfig{16, 8, 8, 6, 16});
  Tokenizer tok = Tokenizer::build(w);
  CHECK(tok.vocab_size() > 4);
  for (const Entity& e : w.entities) {
    const std::string text = knowledge_text(e);
    CHECK(tok.detokenize(tok.tokenize(text)) == text);
  }
  for (Attr a : kAllAttrs) {
    const std::string q = question_for(a);
    CHECK(tok.detokenize(tok.tokenize(q)) == q);
  }
}

TEST_CASE("question mark detaches as its own token and re-attaches") {
  World w = gen_world(6, WorldConfig{8, 8, 8, 6, 16});
  Tokenizer tok = Tokenizer::build(w);
  std::vector<int> ids = tok.tokenize("what is this object?");
  REQUIRE(ids.size() == 5);
  CHECK(tok.word(ids.back()) == "?");
  CHECK(tok.detokenize(ids) == "what is this object?");
}

TEST_CASE("unknown words are a hard error") {
  World w = gen_world(7, WorldConfig{8, 8, 8, 6, 16});
  Tokenizer tok = Tokenizer::build(w);
  CHECK_THROWS_AS(tok.tokenize("zzyzx"), TokenizerError);
  CHECK_THROWS_AS(tok.id("zzyzx"), TokenizerError);
  CHECK_THROWS_AS(tok.word(-1), BoundsError);
  CHECK_THROWS_AS(tok.word(tok.vocab_size()), BoundsError);
}

TEST_CASE("special token ids are reserved") {
  World w = gen_world(8, WorldConfig{8, 8, 8, 6, 16});
  Tokenizer tok = Tokenizer::build(w);
  CHECK(Tokenizer::kPad == 0);
  CHECK(Tokenizer::kBos == 1);
  CHECK(Tokenizer::kEos == 2);
  CHECK(Tokenizer::kSep == 3);
  std::vector<int> prompt = tok.knowledge_prompt_ids();
  REQUIRE(!prompt.empty());
  CHECK(prompt[0] == Tokenizer::kBos);
}

TEST_CASE("tokenizers from equal worlds assign equal ids") {
  World a = gen_world(9, WorldConfig{16, 8, 8, 6, 16});
  World b = gen_world(9, WorldConfig{16, 8, 8, 6, 16});
  Tokenizer ta = Tokenizer::build(a);
  Tokenizer tb = Tokenizer::build(b);
  REQUIRE(ta.vocab_size() == tb.vocab_size());
  for (int i = 0; i < ta.vocab_size(); ++i) {
    CHECK(ta.word(i) == tb.word(i));
  }
}

TEST_CASE("knowledge pairs cover every entity the requested number of times") {
  World w = gen_world(10, WorldConfig{8, 8, 8, 6, 16});
  auto pairs = make_knowledge_pairs(w, 3, 7);
  CHECK(pairs.size() == 24);
  std::map<std::string, int> per_knowledge;
  for (const KnowledgePair& p : pairs) {
    per_knowledge[p.knowledge] += 1;
    CHECK_NOTHROW(p.image.validate());
  }
  CHECK(per_knowledge.size() == 8);
  for (const auto& [k, n] : per_knowledge) CHECK(n == 3);
}

TEST_CASE("instruction split holds out one category per entity") {
  World w = gen_world(11, WorldConfig{16, 8, 8, 6, 16});
  InstructionSplits s = make_instruction_set(w, 13, 2);
  // 16 entities * (3 held-in categories) * 2 renders; one held-out render
  // per entity.
  CHECK(s.train.size() == 96);
  CHECK(s.held_out.size() == 16);

  // Held-out counts stay balanced across categories.
  std::map<Attr, int> held_by_cat;
  for (const InstructionSample& x : s.held_out) held_by_cat[x.category]++;
  int lo = 1 << 30, hi = 0;
  for (Attr a : kAllAttrs) {
    lo = std::min(lo, held_by_cat[a]);
    hi = std::max(hi, held_by_cat[a]);
  }
  CHECK(hi - lo <= 2);  // counts are per-render; entities split +/-1

  // No image is shared between splits.
  std::set<std::string> train_imgs;
  auto sig = [](const ImageGrid& g) {
    return std::string(reinterpret_cast<const char*>(g.pixels.data()),
                       g.pixels.size() * sizeof(double));
  };
  for (const InstructionSample& x : s.train) train_imgs.insert(sig(x.image));
  for (const InstructionSample& x : s.held_out) {
    CHECK(train_imgs.count(sig(x.image)) == 0);
  }
}

TEST_CASE("instruction answers match the questioned attribute") {
  World w = gen_world(12, WorldConfig{8, 8, 8, 6, 16});
  InstructionSplits s = make_instruction_set(w, 14, 1);
  for (const InstructionSample& x : s.train) {
    CHECK(x.question == question_for(x.category));
    bool found = false;
    for (const Entity& e : w.entities) {
      found = found || e.attribute(x.category) == x.answer;
    }
    CHECK(found);
  }
}

TEST_CASE("base64 round-trips arbitrary bytes") {
  std::vector<std::uint8_t> data;
  for (int i = 0; i < 300; ++i) data.push_back(std::uint8_t(i * 7));
  for (std::size_t len : {std::size_t(0), std::size_t(1), std::size_t(2),
                          std::size_t(3), data.size()}) {
    const std::string enc = base64_encode(data.data(), len);
    const std::vector<std::uint8_t> dec = base64_decode(enc);
    CHECK(dec == std::vector<std::uint8_t>(data.begin(), data.begin() + len));
  }
  CHECK_THROWS_AS(base64_decode("ab#d"), ParseError);
}

TEST_CASE("jsonl pairs round-trip with inline images") {
  namespace fs = std::filesystem;
  World w = gen_world(13, WorldConfig{4, 8, 8, 6, 16});
  auto pairs = make_knowledge_pairs(w, 1, 3);
  const std::string path = "test_data_pairs.jsonl";
  save_jsonl_pairs(path, pairs);
  auto back = load_jsonl_pairs(path);
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].knowledge == pairs[i].knowledge);
    REQUIRE(back[i].image.pixels.size() == pairs[i].image.pixels.size());
    for (std::size_t j = 0; j < pairs[i].image.pixels.size(); ++j) {
      CHECK(back[i].image.pixels[j] ==
            double(float(pairs[i].image.pixels[j])));
    }
  }
  fs::remove(path);
}

TEST_CASE("jsonl instructions round-trip with categories") {
  namespace fs = std::filesystem;
  World w = gen_world(14, WorldConfig{4, 8, 8, 6, 16});
  InstructionSplits s = make_instruction_set(w, 15, 1);
  const std::string path = "test_data_instr.jsonl";
  save_jsonl_instructions(path, s.train);
  auto back = load_jsonl_instructions(path);
  REQUIRE(back.size() == s.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].question == s.train[i].question);
    CHECK(back[i].answer == s.train[i].answer);
    CHECK(back[i].category == s.train[i].category);
  }
  fs::remove(path);
}

TEST_CASE("jsonl parse errors carry the line number") {
  namespace fs = std::filesystem;
  const std::string path = "test_data_bad.jsonl";
  {
    std::vector<KnowledgePair> one;
    World w = gen_world(15, WorldConfig{2, 8, 8, 6, 16});
    one = make_knowledge_pairs(w, 1, 1);
    save_jsonl_pairs(path, one);
  }
  // Append a corrupt third line (line 2 is entity 2's record).
  {
    FILE* f = std::fopen(path.c_str(), "ab");
    std::fputs("{\"image\": 5}\n", f);
    std::fclose(f);
  }
  bool threw = false;
  try {
    load_jsonl_pairs(path);
  } catch (const ParseError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  CHECK(threw);
  fs::remove(path);
  CHECK_THROWS_AS(load_jsonl_pairs("no_such_file.jsonl"), ParseError);
}

// SPDX-License-Identifier: Apache-2.0
#include <vector>

#include "doctest.h"

#include "cvlm/hostlm.hpp"
#include "cvlm/rng.hpp"

using namespace cvlm;

namespace {

struct Fixture {
  ParamStore store;
  HostLm host;

  explicit Fixture(std::uint64_t seed = 5, bool with_lora = true,
                   int n_layers = 2) {
    HostLmConfig cfg;
    cfg.d_l = 32;
    cfg.n_layers = n_layers;
    cfg.n_heads = 2;
    cfg.vocab_size = 23;
    cfg.max_seq_len = 40;
    cfg.ffn_mult = 2;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 4;
    Rng hr(mix_seed(seed, hash_str("hostlm")));
    Rng lr(mix_seed(seed, hash_str("lora")));
    host = HostLm(cfg, store, hr, lr, with_lora);
  }
};

Tensor rand_rows(int r, int c, std::uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = rng.gaussian() * scale;
  }
  return t;
}

}  // namespace

TEST_CASE("config validation") {
  HostLmConfig cfg;
  cfg.vocab_size = 10;
  CHECK_NOTHROW(cfg.validate());
  HostLmConfig bad = cfg;
  bad.d_l = 30;  // not divisible by heads
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.vocab_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lora_rank = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward returns logits only for text positions") {
  Fixture f;
  Tensor img = rand_rows(4, 32, 1);
  Tensor know = rand_rows(3, 32, 2);
  std::vector<int> text = {1, 5, 6, 7, 2};
  Tensor logits = f.host.forward(img, know, text, nullptr, true);
  CHECK(logits.rows() == 5);
  CHECK(logits.cols() == 23);
  CHECK(logits.all_finite());
}

TEST_CASE("absent image and knowledge parts are allowed") {
  Fixture f;
  std::vector<int> text = {1, 4, 2};
  Tensor logits = f.host.forward(Tensor(), Tensor(), text, nullptr, false);
  CHECK(logits.rows() == 3);
}

TEST_CASE("sequence overflow raises TruncationError") {
  Fixture f;
  std::vector<int> text(41, 4);
  CHECK_THROWS_AS(f.host.forward(Tensor(), Tensor(), text, nullptr, false),
                  TruncationError);
  // Prefix parts count against the budget too.
  std::vector<int> ok_alone(39, 4);
  CHECK_NOTHROW(f.host.forward(Tensor(), Tensor(), ok_alone, nullptr, false));
  Tensor img = rand_rows(4, 32, 3);
  CHECK_THROWS_AS(f.host.forward(img, Tensor(), ok_alone, nullptr, false),
                  TruncationError);
}

TEST_CASE("text tokens cannot see the future") {
  Fixture f;
  Tensor img = rand_rows(4, 32, 4);
  std::vector<int> a = {1, 5, 6, 7, 8, 2};
  std::vector<int> b = {1, 5, 6, 9, 10, 11};  // same first three tokens
  Tensor la = f.host.forward(img, Tensor(), a, nullptr, true);
  Tensor lb = f.host.forward(img, Tensor(), b, nullptr, true);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 23; ++j) {
      CHECK(la.at(i, j) == lb.at(i, j));
    }
  }
  bool moved = false;
  for (int j = 0; j < 23; ++j) {
    moved = moved || la.at(3, j) != lb.at(3, j);
  }
  CHECK(moved);
}

TEST_CASE("text attends to image and knowledge prefixes") {
  Fixture f;
  std::vector<int> text = {1, 5, 2};
  Tensor la = f.host.forward(rand_rows(4, 32, 5), Tensor(), text, nullptr,
                             true);
  Tensor lb = f.host.forward(rand_rows(4, 32, 6), Tensor(), text, nullptr,
                             true);
  bool moved = false;
  for (std::size_t i = 0; i < la.numel(); ++i) {
    moved = moved || la.data()[i] != lb.data()[i];
  }
  CHECK(moved);
}

TEST_CASE("injected slices change the output and carried rows track mode") {
  Fixture f;
  Tensor h_fka = rand_rows(4, 32, 7);  // LD=2 over LN=2
  InjectionPlan plan = plan_injection(h_fka, 2);
  std::vector<int> text = {1, 5, 6, 2};
  Tensor img = rand_rows(4, 32, 8);

  std::vector<int> strip_rows, acc_rows, none_rows;
  Tensor with_plan = f.host.forward(img, Tensor(), text, &plan, true,
                                    InjectionMode::kStrip, &strip_rows);
  Tensor without = f.host.forward(img, Tensor(), text, nullptr, true,
                                  InjectionMode::kStrip, &none_rows);
  bool moved = false;
  for (std::size_t i = 0; i < with_plan.numel(); ++i) {
    moved = moved || with_plan.data()[i] != without.data()[i];
  }
  CHECK(moved);

  // Strip: every layer carries s = 4 image + 4 text rows.
  REQUIRE(strip_rows.size() == 2);
  CHECK(strip_rows[0] == 8);
  CHECK(strip_rows[1] == 8);
  CHECK(none_rows == strip_rows);

  Tensor acc = f.host.forward(img, Tensor(), text, &plan, true,
                              InjectionMode::kAccumulate, &acc_rows);
  REQUIRE(acc_rows.size() == 2);
  CHECK(acc_rows[0] == 10);
  CHECK(acc_rows[1] == 12);
  CHECK(acc.rows() == 4);
}

TEST_CASE("plan length must match the layer count") {
  Fixture f;
  Tensor h_fka = rand_rows(3, 32, 9);
  InjectionPlan plan = plan_injection(h_fka, 3);  // 3 slices, host has 2
  std::vector<int> text = {1, 2};
  CHECK_THROWS_AS(f.host.forward(Tensor(), Tensor(), text, &plan, false),
                  ConfigError);
}

TEST_CASE("lora starts as an exact no-op") {
  Fixture f;
  std::vector<int> text = {1, 5, 6, 2};
  Tensor img = rand_rows(4, 32, 10);
  Tensor on = f.host.forward(img, Tensor(), text, nullptr, true);
  Tensor off = f.host.forward(img, Tensor(), text, nullptr, false);
  for (std::size_t i = 0; i < on.numel(); ++i) {
    CHECK(on.data()[i] == off.data()[i]);
  }
}

TEST_CASE("disabled lora construction has no adapter parameters") {
  Fixture f(6, false);
  CHECK_FALSE(f.host.lora_enabled());
  for (const Parameter& p : f.store.all()) {
    CHECK(p.name.find("lora") == std::string::npos);
  }
  std::vector<int> text = {1, 5, 2};
  // use_lora is ignored when no adapters exist.
  Tensor a = f.host.forward(Tensor(), Tensor(), text, nullptr, true);
  Tensor b = f.host.forward(Tensor(), Tensor(), text, nullptr, false);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a.data()[i] == b.data()[i]);
  }
}

TEST_CASE("lora_apply adds the scaled low-rank product") {
  Tensor base = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  base.make_leaf(true);
  LoraPair lp;
  lp.rank = 1;
  lp.alpha = 4.0;
  lp.a = Tensor::from_vector({1, 3}, {1, 0, 2});
  lp.b = Tensor::from_vector({2, 1}, {1, -1});
  lp.a.make_leaf(true);
  lp.b.make_leaf(true);
  Tensor eff = lora_apply(base, lp);
  // scale = alpha / rank = 4; delta = 4 * b a.
  CHECK(eff.at(0, 0) == doctest::Approx(1 + 4.0));
  CHECK(eff.at(0, 2) == doctest::Approx(3 + 8.0));
  CHECK(eff.at(1, 0) == doctest::Approx(4 - 4.0));
  CHECK(eff.at(1, 2) == doctest::Approx(6 - 8.0));
}

TEST_CASE("merge then disable equals apply") {
  Fixture f(7);
  // Give the adapters nonzero content first.
  Rng rng(77);
  for (Parameter& p : f.store.all()) {
    if (p.name.find("lora") != std::string::npos) {
      for (std::size_t i = 0; i < p.tensor.numel(); ++i) {
        p.tensor.data()[i] = rng.gaussian() * 0.05;
      }
    }
  }
  std::vector<int> text = {1, 5, 6, 7, 2};
  Tensor img = rand_rows(4, 32, 11);
  Tensor applied = f.host.forward(img, Tensor(), text, nullptr, true);
  f.host.merge_lora();
  Tensor merged = f.host.forward(img, Tensor(), text, nullptr, false);
  for (std::size_t i = 0; i < applied.numel(); ++i) {
    CHECK(applied.data()[i] ==
          doctest::Approx(merged.data()[i]).epsilon(1e-12));
  }
  // Adapters are zeroed, so re-enabling them changes nothing.
  Tensor again = f.host.forward(img, Tensor(), text, nullptr, true);
  for (std::size_t i = 0; i < again.numel(); ++i) {
    CHECK(again.data()[i] == merged.data()[i]);
  }
}

TEST_CASE("token_embedding_rows returns bare embeddings") {
  Fixture f;
  Tensor rows = f.host.token_embedding_rows({4, 4});
  CHECK(rows.rows() == 2);
  CHECK(rows.cols() == 32);
  for (int j = 0; j < 32; ++j) {
    CHECK(rows.at(0, j) == rows.at(1, j));  // no position codes
  }
}

TEST_CASE("visual mlp maps patch width to host width") {
  ParamStore store;
  Rng rng(8);
  VisualMlp mlp;
  mlp.init(store, 16, 32, rng);
  Tensor patches = rand_rows(5, 16, 12);
  Tensor out = mlp.forward(patches);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 32);
  CHECK_THROWS_AS(mlp.forward(rand_rows(5, 8, 13)), ShapeError);
}

TEST_CASE("identical seeds build identical hosts") {
  Fixture a(9), b(9);
  std::vector<int> text = {1, 6, 7, 2};
  Tensor img = rand_rows(4, 32, 14);
  Tensor la = a.host.forward(img, Tensor(), text, nullptr, true);
  Tensor lb = b.host.forward(img, Tensor(), text, nullptr, true);
  for (std::size_t i = 0; i < la.numel(); ++i) {
    CHECK(la.data()[i] == lb.data()[i]);
  }
}

// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"

#include "cvlm/optim.hpp"
#include "cvlm/rng.hpp"

using namespace cvlm;

namespace {

void set_grad(Parameter& p, const std::vector<double>& g) {
  p.tensor.node->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) p.tensor.node->grad[i] = g[i];
}

}  // namespace

TEST_CASE("adamw matches a scalar oracle over several steps") {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  ParamStore store;
  store.add("w", Tensor::from_vector({2}, {0.7, -1.3}), Group::kVka);
  AdamW::Hyper hy;
  hy.weight_decay = wd;
  AdamW opt(hy);

  double w[2] = {0.7, -1.3};
  double m[2] = {0, 0}, v[2] = {0, 0};
  const std::vector<std::vector<double>> grads = {
      {0.3, -0.8}, {-0.1, 0.25}, {0.9, 0.0}};
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    set_grad(store.at("w"), grads[t - 1]);
    opt.step(store, {{Group::kVka, lr}});
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, double(t)));
      const double vh = v[i] / (1 - std::pow(b2, double(t)));
      w[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * w[i]);
      CHECK(store.at("w").tensor.data()[i] ==
            doctest::Approx(w[i]).epsilon(1e-14));
    }
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("step clears gradients and skips frozen parameters") {
  ParamStore store;
  store.add("a", Tensor::full({1}, 1.0), Group::kVka);
  store.add("b", Tensor::full({1}, 1.0), Group::kMlp);
  store.set_trainable("b", false);
  set_grad(store.at("a"), {1.0});
  AdamW opt;
  opt.step(store, {{Group::kVka, 0.1}});
  CHECK(store.at("a").tensor.data()[0] != 1.0);
  CHECK(store.at("b").tensor.data()[0] == 1.0);
  for (double g : store.at("a").tensor.node->grad) CHECK(g == 0.0);
  CHECK(opt.slots().count("a") == 1);
  CHECK(opt.slots().count("b") == 0);
}

TEST_CASE("a parameter with no accumulated gradient is left alone") {
  ParamStore store;
  store.add("a", Tensor::full({2}, 5.0), Group::kVka);
  AdamW opt;
  opt.step(store, {{Group::kVka, 0.1}});
  CHECK(store.at("a").tensor.data()[0] == 5.0);
  CHECK(store.at("a").tensor.data()[1] == 5.0);
}

TEST_CASE("moments survive freeze pattern changes between stages") {
  ParamStore store;
  store.add("w", Tensor::full({1}, 1.0), Group::kVka);
  AdamW opt;
  set_grad(store.at("w"), {0.5});
  opt.step(store, {{Group::kVka, 0.01}});
  const double m0 = opt.slots().at("w").m[0];
  store.set_trainable("w", false);
  opt.step(store, {{Group::kVka, 0.01}});
  CHECK(opt.slots().at("w").m[0] == m0);
  store.set_trainable("w", true);
  set_grad(store.at("w"), {0.5});
  opt.step(store, {{Group::kVka, 0.01}});
  CHECK(opt.slots().at("w").m[0] != m0);
}

TEST_CASE("missing group learning rate is a configuration error") {
  ParamStore store;
  store.add("w", Tensor::full({1}, 1.0), Group::kLora);
  set_grad(store.at("w"), {1.0});
  AdamW opt;
  CHECK_THROWS_AS(opt.step(store, {{Group::kVka, 0.1}}), ConfigError);
}

TEST_CASE("non-finite gradient aborts and names the parameter") {
  ParamStore store;
  store.add("fka.w", Tensor::full({1}, 1.0), Group::kFka);
  set_grad(store.at("fka.w"), {std::nan("")});
  AdamW opt;
  bool threw = false;
  try {
    opt.step(store, {{Group::kFka, 0.1}});
  } catch (const TrainingAbort& e) {
    threw = true;
    CHECK(std::string(e.what()).find("fka.w") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("clip_global_norm scales to the target norm") {
  ParamStore store;
  store.add("a", Tensor::zeros({2}), Group::kVka);
  store.add("b", Tensor::zeros({1}), Group::kMlp);
  set_grad(store.at("a"), {3.0, 0.0});
  set_grad(store.at("b"), {4.0});
  const double pre = clip_global_norm(store, 1.0);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
  double post = 0.0;
  for (const char* n : {"a", "b"}) {
    for (double g : store.at(n).tensor.node->grad) post += g * g;
  }
  CHECK(std::sqrt(post) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clip_global_norm below the limit is a no-op") {
  ParamStore store;
  store.add("a", Tensor::zeros({1}), Group::kVka);
  set_grad(store.at("a"), {0.25});
  const double pre = clip_global_norm(store, 1.0);
  CHECK(pre == doctest::Approx(0.25));
  CHECK(store.at("a").tensor.node->grad[0] == 0.25);
}

TEST_CASE("cosine schedule endpoints and monotone decay") {
  const double mx = 3e-4, mn = 1e-5;
  CHECK(cosine_lr(0, 100, 10, mx, mn) == 0.0);
  CHECK(cosine_lr(5, 100, 10, mx, mn) == doctest::Approx(mx * 0.5));
  CHECK(cosine_lr(10, 100, 10, mx, mn) == doctest::Approx(mx));
  CHECK(cosine_lr(100, 100, 10, mx, mn) == doctest::Approx(mn));
  CHECK(cosine_lr(55, 100, 10, mx, mn) ==
        doctest::Approx(mn + 0.5 * (mx - mn) *
                                 (1 + std::cos(M_PI * 45.0 / 90.0))));
  for (std::int64_t s = 10; s < 100; ++s) {
    CHECK(cosine_lr(s, 100, 10, mx, mn) >= cosine_lr(s + 1, 100, 10, mx, mn));
  }
  // Clamping outside the schedule range.
  CHECK(cosine_lr(-5, 100, 10, mx, mn) == 0.0);
  CHECK(cosine_lr(400, 100, 10, mx, mn) == doctest::Approx(mn));
}

TEST_CASE("cosine schedule with zero warmup starts at lr_max") {
  CHECK(cosine_lr(0, 50, 0, 1e-3) == doctest::Approx(1e-3));
  CHECK(cosine_lr(50, 50, 0, 1e-3) == doctest::Approx(0.0));
}

TEST_CASE("cosine schedule argument validation") {
  CHECK_THROWS_AS(cosine_lr(0, 0, 0, 1e-3), ConfigError);
  CHECK_THROWS_AS(cosine_lr(0, -5, 0, 1e-3), ConfigError);
  CHECK_THROWS_AS(cosine_lr(0, 100, -1, 1e-3), ConfigError);
  CHECK_THROWS_AS(cosine_lr(0, 100, 100, 1e-3), ConfigError);
}

// SPDX-License-Identifier: Apache-2.0
#include "cvlm/nn.hpp"

#include <cmath>

#include "cvlm/ops.hpp"

namespace cvlm {

const char* group_name(Group g) {
  switch (g) {
    case Group::kVka: return "vka";
    case Group::kMlp: return "mlp";
    case Group::kFka: return "fka";
    case Group::kLora: return "lora";
    case Group::kHostLm: return "hostlm";
    case Group::kVision: return "vision";
  }
  return "?";
}

Group group_from_name(const std::string& s) {
  if (s == "vka") return Group::kVka;
  if (s == "mlp") return Group::kMlp;
  if (s == "fka") return Group::kFka;
  if (s == "lora") return Group::kLora;
  if (s == "hostlm") return Group::kHostLm;
  if (s == "vision") return Group::kVision;
  throw ConfigError("unknown parameter group '" + s + "'");
}

Parameter& ParamStore::add(const std::string& name, Tensor t, Group g) {
  if (index_.count(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  t.make_leaf(true);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, std::move(t), g, true});
  return params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParamStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw ConfigError("unknown parameter '" + name + "'");
  return *p;
}

std::vector<Parameter*> ParamStore::in_group(Group g) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p.group == g) out.push_back(&p);
  }
  return out;
}

void ParamStore::set_trainable_all(bool on) {
  for (auto& p : params_) {
    p.trainable = on;
    p.tensor.node->requires_grad = on;
  }
}

void ParamStore::set_trainable_group(Group g, bool on) {
  for (auto& p : params_) {
    if (p.group != g) continue;
    p.trainable = on;
    p.tensor.node->requires_grad = on;
  }
}

void ParamStore::set_trainable(const std::string& name, bool on) {
  Parameter& p = at(name);
  p.trainable = on;
  p.tensor.node->requires_grad = on;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.trainable;
  return n;
}

std::size_t ParamStore::trainable_numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.tensor.numel();
  }
  return n;
}

std::uint64_t ParamStore::checksum_group(Group g) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_bytes = [&h](const void* ptr, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(ptr);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : params_) {
    if (p.group != g) continue;
    mix_bytes(p.tensor.data(), p.tensor.numel() * sizeof(double));
  }
  return h;
}

Tensor gaussian_init(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  double* p = t.data();
  for (std::size_t i = 0; i < t.numel(); ++i) p[i] = rng.gaussian() * stddev;
  return t;
}

void MultiHeadAttention::init(ParamStore& store, const std::string& prefix,
                              int d, int heads, Group g, Rng& rng,
                              bool zero_out_proj, int d_kv) {
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError(prefix + ": model dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (d_kv < 0) d_kv = d;
  d_model = d;
  n_heads = heads;
  wq = store.add(prefix + ".wq", gaussian_init(rng, {d, d}), g).tensor;
  bq = store.add(prefix + ".bq", Tensor::zeros({d}), g).tensor;
  wk = store.add(prefix + ".wk", gaussian_init(rng, {d, d_kv}), g).tensor;
  bk = store.add(prefix + ".bk", Tensor::zeros({d}), g).tensor;
  wv = store.add(prefix + ".wv", gaussian_init(rng, {d, d_kv}), g).tensor;
  bv = store.add(prefix + ".bv", Tensor::zeros({d}), g).tensor;
  Tensor wo_init =
      zero_out_proj ? Tensor::zeros({d, d}) : gaussian_init(rng, {d, d});
  wo = store.add(prefix + ".wo", std::move(wo_init), g).tensor;
  bo = store.add(prefix + ".bo", Tensor::zeros({d}), g).tensor;
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in,
                                   const Tensor& mask) const {
  return forward_with(q_in, kv_in, mask, wq, wv);
}

Tensor MultiHeadAttention::forward_with(const Tensor& q_in,
                                        const Tensor& kv_in,
                                        const Tensor& mask,
                                        const Tensor& wq_eff,
                                        const Tensor& wv_eff) const {
  Tensor q = ops::linear(q_in, wq_eff, bq);
  Tensor k = ops::linear(kv_in, wk, bk);
  Tensor v = ops::linear(kv_in, wv_eff, bv);
  const int hd = d_model / n_heads;
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = ops::slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = ops::slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = ops::slice_cols(v, h * hd, (h + 1) * hd);
    heads.push_back(ops::attention(qh, kh, vh, mask));
  }
  Tensor cat = n_heads == 1 ? heads[0] : ops::concat_cols(heads);
  return ops::linear(cat, wo, bo);
}

void FeedForward::init(ParamStore& store, const std::string& prefix, int d,
                       int mult, Group g, Rng& rng) {
  if (mult <= 0) throw ConfigError(prefix + ": feed-forward mult must be > 0");
  d_model = d;
  const int h = d * mult;
  w1 = store.add(prefix + ".w1", gaussian_init(rng, {h, d}), g).tensor;
  b1 = store.add(prefix + ".b1", Tensor::zeros({h}), g).tensor;
  w2 = store.add(prefix + ".w2", gaussian_init(rng, {d, h}), g).tensor;
  b2 = store.add(prefix + ".b2", Tensor::zeros({d}), g).tensor;
}

Tensor FeedForward::forward(const Tensor& x) const {
  return ops::linear(ops::gelu(ops::linear(x, w1, b1)), w2, b2);
}

void LayerNormParams::init(ParamStore& store, const std::string& prefix,
                           int d, Group g) {
  gamma = store.add(prefix + ".gamma", Tensor::full({d}, 1.0), g).tensor;
  beta = store.add(prefix + ".beta", Tensor::zeros({d}), g).tensor;
}

Tensor LayerNormParams::forward(const Tensor& x) const {
  return ops::layer_norm(x, gamma, beta);
}

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvlm/rng.hpp"
#include "cvlm/tensor.hpp"

namespace cvlm {

// Learning-rate / freeze group a parameter belongs to.
enum class Group : std::uint8_t { kVka, kMlp, kFka, kLora, kHostLm, kVision };

const char* group_name(Group g);
Group group_from_name(const std::string& s);

struct Parameter {
  std::string name;  // unique dotted path
  Tensor tensor;
  Group group;
  bool trainable = true;
};

// Owns every parameter of a model bundle in registration order; that order
// is the serialization order, so construction must be deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor t, Group g);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  std::vector<Parameter*> in_group(Group g);

  void set_trainable_all(bool on);
  void set_trainable_group(Group g, bool on);
  void set_trainable(const std::string& name, bool on);

  std::size_t trainable_count() const;
  std::size_t trainable_numel() const;

  // FNV-1a over the raw f64 bytes of the group's tensors, registration order.
  std::uint64_t checksum_group(Group g) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Conventional transformer init: N(0, 0.02) weights, zero biases.
Tensor gaussian_init(Rng& rng, std::vector<int> shape, double stddev = 0.02);

// Multi-head attention over rank-2 sequences. Self-attention when kv is the
// query source, cross-attention otherwise.
struct MultiHeadAttention {
  int d_model = 0;
  int n_heads = 0;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  // prefix: e.g. "vka.block0.self". zero_out_proj starts the sublayer as a
  // no-op (used by cross-attention so training begins text-only). d_kv is
  // the key/value input width when it differs from d.
  void init(ParamStore& store, const std::string& prefix, int d, int heads,
            Group g, Rng& rng, bool zero_out_proj = false, int d_kv = -1);

  Tensor forward(const Tensor& q_in, const Tensor& kv_in,
                 const Tensor& mask) const;
  // Same, with externally supplied effective q/v weights (adapter path).
  Tensor forward_with(const Tensor& q_in, const Tensor& kv_in,
                      const Tensor& mask, const Tensor& wq_eff,
                      const Tensor& wv_eff) const;
};

// Two-layer GELU MLP: d -> mult*d -> d.
struct FeedForward {
  int d_model = 0;
  Tensor w1, b1, w2, b2;

  void init(ParamStore& store, const std::string& prefix, int d, int mult,
            Group g, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gamma, beta;

  void init(ParamStore& store, const std::string& prefix, int d, Group g);
  Tensor forward(const Tensor& x) const;
};

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cvlm/nn.hpp"

namespace cvlm {

// Linear warmup to lr_max, then cosine decay to lr_min. step is clamped to
// [0, total_steps].
double cosine_lr(std::int64_t step, std::int64_t total_steps,
                 std::int64_t warmup_steps, double lr_max, double lr_min = 0.0);

// Scales every trainable gradient so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(ParamStore& store, double max_norm);

// AdamW with decoupled weight decay. Moments are kept per trainable
// parameter, keyed by name, so freezing patterns can change between stages
// without invalidating state.
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW() = default;
  explicit AdamW(const Hyper& h) : hyper_(h) {}

  // One update over every trainable parameter. lr per parameter is
  // group_lr.at(group). Gradients are read from the autodiff slots and
  // cleared afterwards. Non-finite gradient aborts with the parameter name.
  void step(ParamStore& store, const std::map<Group, double>& group_lr);

  std::int64_t step_count() const { return t_; }

  struct Slot {
    std::vector<double> m, v;
  };
  // Exposed for checkpointing.
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const Hyper& hyper() const { return hyper_; }

 private:
  Hyper hyper_;
  std::int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace cvlm

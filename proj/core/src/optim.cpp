// SPDX-License-Identifier: Apache-2.0
#include "cvlm/optim.hpp"

#include <cmath>

namespace cvlm {

double cosine_lr(std::int64_t step, std::int64_t total_steps,
                 std::int64_t warmup_steps, double lr_max, double lr_min) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be > 0");
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ConfigError("cosine_lr: warmup_steps must be in [0, total_steps)");
  }
  if (step < 0) step = 0;
  if (step > total_steps) step = total_steps;
  if (warmup_steps > 0 && step < warmup_steps) {
    return lr_max * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  }
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  constexpr double kPi = 3.14159265358979323846;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(kPi * progress));
}

double clip_global_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    const auto& g = p.tensor.node->grad;
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : store.all()) {
      if (!p.trainable) continue;
      for (double& v : p.tensor.node->grad) v *= s;
    }
  }
  return norm;
}

void AdamW::step(ParamStore& store, const std::map<Group, double>& group_lr) {
  ++t_;
  const double b1 = hyper_.beta1;
  const double b2 = hyper_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    auto it = group_lr.find(p.group);
    if (it == group_lr.end()) {
      throw ConfigError(std::string("adamw: no learning rate for group '") +
                        group_name(p.group) + "' (parameter " + p.name + ")");
    }
    const double lr = it->second;
    auto& node = *p.tensor.node;
    node.ensure_grad();  // zero grad counts as a no-motion step
    Slot& slot = slots_[p.name];
    const std::size_t n = p.tensor.numel();
    if (slot.m.size() != n) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    }
    double* w = p.tensor.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = node.grad[i];
      if (!std::isfinite(g)) {
        throw TrainingAbort("adamw: non-finite gradient in parameter '" +
                            p.name + "'");
      }
      slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
      slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + hyper_.eps) +
                    hyper_.weight_decay * w[i]);
    }
    node.grad.assign(n, 0.0);
  }
}

}  // namespace cvlm

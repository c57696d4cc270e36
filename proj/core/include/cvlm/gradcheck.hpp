// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cvlm/nn.hpp"

namespace cvlm {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  std::size_t n_checked = 0;  // scalar elements compared
};

// Compares backward() gradients of fn() against central finite differences
// (f64, step h) for every trainable parameter element in the store. fn must
// rebuild its graph on every call and return a scalar. Relative error is
// |a - d| / max(|a|, |d|, 1e-5); the floor keeps near-zero gradients from
// being scored against FD roundoff noise alone.
GradCheckResult gradcheck(ParamStore& store,
                          const std::function<Tensor()>& fn, double h = 1e-5);

struct ModuleCheck {
  std::string name;
  GradCheckResult result;
};

// Per-layer-type checks on small randomized cases, then one full pipeline
// training-step check (instruction stage, 2-sample batch, host width 32,
// 2 host layers, 2 injected rows per layer).
std::vector<ModuleCheck> gradcheck_suite(std::uint64_t seed);

// Highest error across the suite.
double gradcheck_suite_max(const std::vector<ModuleCheck>& checks);

}  // namespace cvlm

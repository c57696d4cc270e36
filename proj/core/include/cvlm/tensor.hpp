// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cvlm/error.hpp"

namespace cvlm {

class Tensor;

// One recorded operation (or leaf) in the autodiff graph. Intermediate nodes
// carry a backward closure over the saved forward values; leaves are bare
// gradient slots owned by parameters.
struct Node {
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // empty for leaves
  std::vector<double> grad;                // sized lazily to the output numel
  std::size_t out_numel = 0;
  bool requires_grad = false;  // leaves only: false freezes the slot
  bool consumed = false;       // set once a backward pass has used this root

  bool is_leaf() const { return !backward_fn; }

  void ensure_grad() {
    if (grad.size() != out_numel) grad.assign(out_numel, 0.0);
  }

  void accumulate(const double* g, std::size_t n) {
    ensure_grad();
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
  }
};

// Dense row-major f64 tensor with value semantics over a shared buffer.
// A tensor optionally points at an autodiff node; copies alias both.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor from_vector(std::vector<int> shape, std::vector<double> v);
  static Tensor scalar(double v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int rows() const { return shape_.empty() ? 1 : shape_[0]; }
  int cols() const { return shape_.size() >= 2 ? shape_[1] : 1; }
  std::size_t numel() const;
  bool empty_buffer() const { return !data_; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  const std::shared_ptr<std::vector<double>>& buffer() const { return data_; }

  double value() const;             // scalar read, numel must be 1
  double at(int r, int c) const;    // 2-d read
  double& at(int r, int c);

  bool all_finite() const;

  // Graph participation: a tensor feeds gradients when it has a node that is
  // either an op output or a trainable leaf.
  std::shared_ptr<Node> node;
  bool tracked() const {
    return node && (!node->is_leaf() || node->requires_grad);
  }

  // Turns this tensor into a trainable leaf (allocates its gradient slot).
  void make_leaf(bool requires_grad = true);

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

// Ordered list of recorded operations produced by a backward pass; node i is
// visited exactly once, in reverse topological order.
struct Tape {
  std::vector<Node*> order;
};

// Reverse-mode sweep from a scalar loss. Accumulates into every reachable
// trainable leaf's gradient slot. A second sweep over the same recorded graph
// without a fresh forward raises StaleTapeError.
Tape backward(const Tensor& loss, double seed = 1.0);

// RAII guard that disables graph recording (evaluation / finite differences).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

bool grad_enabled();

std::size_t shape_numel(const std::vector<int>& shape);

}  // namespace cvlm

// SPDX-License-Identifier: Apache-2.0
#include "cvlm/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cvlm {

namespace {
thread_local int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGrad::NoGrad() { ++g_no_grad_depth; }
NoGrad::~NoGrad() { --g_no_grad_depth; }

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  std::size_t n = shape_numel(shape);
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(n, 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : *t.data_) x = v;
  return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> v) {
  std::size_t n = shape_numel(shape);
  if (v.size() != n) {
    throw ShapeError("from_vector: buffer size " + std::to_string(v.size()) +
                     " does not match shape numel " + std::to_string(n));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(v));
  return t;
}

Tensor Tensor::scalar(double v) { return from_vector({1}, {v}); }

std::size_t Tensor::numel() const { return data_ ? data_->size() : 0; }

double Tensor::value() const {
  if (numel() != 1) {
    throw ShapeError("value(): tensor is not scalar, shape " + shape_str());
  }
  return (*data_)[0];
}

double Tensor::at(int r, int c) const {
  return (*data_)[static_cast<std::size_t>(r) * cols() + c];
}

double& Tensor::at(int r, int c) {
  return (*data_)[static_cast<std::size_t>(r) * cols() + c];
}

bool Tensor::all_finite() const {
  if (!data_) return true;
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::make_leaf(bool requires_grad) {
  node = std::make_shared<Node>();
  node->out_numel = numel();
  node->requires_grad = requires_grad;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

Tape backward(const Tensor& loss, double seed) {
  if (!loss.node) {
    throw StaleTapeError("backward: loss has no recorded tape (run a tracked forward first)");
  }
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + loss.shape_str());
  }
  Node* root = loss.node.get();
  if (root->consumed) {
    throw StaleTapeError("backward: tape already consumed; re-run the forward pass");
  }

  // Iterative post-order DFS; parent order makes traversal deterministic.
  Tape tape;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node* child = f.n->parents[f.next_child].get();
      ++f.next_child;
      if (child && !child->is_leaf() && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      tape.order.push_back(f.n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += seed;
  for (std::size_t i = tape.order.size(); i-- > 0;) {
    Node* n = tape.order[i];
    if (n->grad.empty()) continue;  // unreachable from the seed
    if (n->backward_fn) n->backward_fn(*n);
  }
  root->consumed = true;
  return tape;
}

}  // namespace cvlm

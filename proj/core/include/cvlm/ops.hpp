// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "cvlm/tensor.hpp"

namespace cvlm::ops {

// Elementwise and broadcast arithmetic. All inputs are rank-2 unless noted.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// x: [n, d], v: [1, d] (or numel d). Adds v to every row of x.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// a: [n, k], b: [k, m] -> [n, m]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [n, k], b: [m, k] -> [n, m]  (b used transposed)
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// x: [n, in], w: [out, in], b: [out] -> [n, out]; computes x * w^T + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Row-wise softmax with the max-subtraction trick.
Tensor softmax_rows(const Tensor& x);

// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);

// Per-row layer norm. gamma/beta have numel == cols(x).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Row-stacking concatenation; all inputs share a column count.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Column-wise concatenation; all inputs share a row count.
Tensor concat_cols(const std::vector<Tensor>& parts);

// Half-open row/column ranges. BoundsError when outside [0, extent].
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);

// x: [n, d] -> [1, d] mean over rows.
Tensor mean_rows(const Tensor& x);

// table: [V, d]; gathers one row per id -> [len(ids), d].
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);

// softmax(q k^T / sqrt(d) + mask) v. mask is additive, [n_q, n_k], or
// empty (no node) to skip. Shape mismatches raise ShapeError naming both.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& mask);

enum class Reduction : std::uint8_t { kMean, kSum };

// logits: [L, V]; targets/ignore: length L. Positions with ignore[i] != 0
// contribute nothing. Mean divides by the unmasked count.
// DegenerateBatchError when every position is masked out.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& ignore,
                     Reduction reduction);

// Convenience overload: targets[i] == ignore_index marks a masked position.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_index, Reduction reduction);

std::size_t count_unmasked(const std::vector<std::uint8_t>& ignore);

// Additive masks built as constant tensors (-1e30 for blocked pairs).
Tensor causal_mask(int n);
// Rows [0, n_front) attend bidirectionally among themselves and are visible
// to everything; rows >= n_front are causal with respect to each other.
Tensor prefix_causal_mask(int n_front, int n_tail);

}  // namespace cvlm::ops

namespace cvlm {
using ops::Reduction;
}  // namespace cvlm

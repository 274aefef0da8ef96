// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_CORE_OPS_HPP_
#define MOEUP_CORE_OPS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "moeup/core/tensor.hpp"

namespace moeup {

// Multiply-accumulate counter for the current thread. Every dense product
// computed by the kernels below adds m*k*n to it.
std::uint64_t mac_count();
void reset_mac_count();

// Plain C = A(m x k) * B(k x n) (+ C when accumulate). Counts MACs.
void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate);

// Scalar helpers.
double softplus(double x);
double sigmoid(double x);

// Softmax over the entries whose keep flag is set (all entries when `keep`
// is empty). Masked positions map to exactly 0. Throws kInvalidGate when
// every entry is masked.
std::vector<double> softmax(std::span<const double> values,
                            std::span<const std::uint8_t> keep = {});

// Differentiable operations. Shapes are checked; mismatches throw
// kDimension naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor sum_squares(const Tensor& a);

// Row-wise RMS normalisation of x (T x d) with gain w (d).
Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps);

// Rows of `table` selected by ids.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Rows of x at `rows`, in order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// (n x d) rows placed at `rows` of a zero (total_rows x d) matrix.
Tensor scatter_rows(const Tensor& x, std::span<const std::size_t> rows,
                    std::size_t total_rows);
// Column vector (n) of m[rows[i], col].
Tensor gather_column(const Tensor& m, std::span<const std::size_t> rows,
                     std::size_t col);
// Each row i of x (n x d) multiplied by s[i].
Tensor scale_rows(const Tensor& x, const Tensor& s);

struct AttentionGeometry {
  std::size_t sequences = 1;
  std::size_t seq_len = 1;
  std::size_t heads = 1;
  std::size_t kv_heads = 1;
  std::size_t head_dim = 1;
};

// Causal scaled dot-product attention over `sequences` stacked sequences.
// q is (S*L x heads*hd); k and v are (S*L x kv_heads*hd). Query head h reads
// key/value head h / (heads / kv_heads). Scores are computed for the full
// L x L block and the upper triangle is masked before the softmax.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionGeometry& geom);

// Rotary position embedding applied to pairs (2i, 2i+1) of every head.
Tensor rope(const Tensor& x, std::size_t sequences, std::size_t seq_len,
            std::size_t heads, std::size_t head_dim, double theta);

// Mean token negative log-likelihood of logits (T x V) against targets.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace moeup

#endif  // MOEUP_CORE_OPS_HPP_

// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_MODEL_TRANSFORMER_HPP_
#define MOEUP_MODEL_TRANSFORMER_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "moeup/core/tensor.hpp"
#include "moeup/model/checkpoint.hpp"
#include "moeup/moe/layer.hpp"

namespace moeup {

// `sequences` rows of `seq_len` token ids, row-major.
struct Batch {
  std::vector<int> tokens;
  std::size_t sequences = 1;
  std::size_t seq_len = 0;
};

struct ForwardOptions {
  // Training mode turns on router noise for gates configured with it.
  bool training = false;
  // Noise for MoE layer l is drawn from Rng(noise_seed, noise_stream * 65536 + l).
  std::uint64_t noise_seed = 0;
  std::uint64_t noise_stream = 0;
  bool keep_trace = false;
};

// Per-layer FFN input/output, recorded when keep_trace is set.
struct LayerTrace {
  Tensor ffn_input;   // normalised hidden state fed to the FFN / MoE block
  Tensor ffn_output;  // block output before the residual add
  std::optional<Gates> gates;
  std::vector<std::uint8_t> token_dropped;
};

struct LayerRouting {
  std::size_t layer = 0;
  RoutingStats stats;
};

struct ForwardResult {
  Tensor logits;  // (sequences * seq_len) x vocab
  std::vector<LayerRouting> routing;
  std::vector<LayerTrace> trace;
  Tensor aux_loss;  // sum of MoE importance penalties, if any
};

// Pre-norm decoder: causal GQA attention and SwiGLU FFN (or MoE block) with
// residuals, final RMSNorm and an untied output head. Deterministic.
ForwardResult forward(const Checkpoint& ckpt, const Batch& batch,
                      const ForwardOptions& options = {});

// Single sequence, evaluation mode.
Tensor forward_logits(const Checkpoint& ckpt, std::span<const int> tokens);

MoELayer moe_layer_view(const Checkpoint& ckpt, std::size_t layer);
ExpertWeights dense_ffn_view(const Checkpoint& ckpt, std::size_t layer);

}  // namespace moeup

#endif  // MOEUP_MODEL_TRANSFORMER_HPP_

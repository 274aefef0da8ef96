// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/model/transformer.hpp"

#include "moeup/core/error.hpp"
#include "moeup/core/ops.hpp"
#include "moeup/core/rng.hpp"

namespace moeup {

MoELayer moe_layer_view(const Checkpoint& ckpt, std::size_t layer) {
  if (!ckpt.is_moe_layer(layer)) {
    fail(ErrorCode::kConfig, "layer " + std::to_string(layer) + " is not an MoE layer");
  }
  MoELayer view;
  view.router.w_gate = ckpt.at(names::router(layer, "w_gate"));
  view.router.w_noise = ckpt.at(names::router(layer, "w_noise"));
  for (std::size_t e = 0; e < ckpt.moe->gate.num_experts; ++e) {
    view.experts.push_back({ckpt.at(names::expert(layer, e, "w1")),
                            ckpt.at(names::expert(layer, e, "w2")),
                            ckpt.at(names::expert(layer, e, "w3"))});
  }
  return view;
}

ExpertWeights dense_ffn_view(const Checkpoint& ckpt, std::size_t layer) {
  return {ckpt.at(names::ffn(layer, "w1")), ckpt.at(names::ffn(layer, "w2")),
          ckpt.at(names::ffn(layer, "w3"))};
}

ForwardResult forward(const Checkpoint& ckpt, const Batch& batch,
                      const ForwardOptions& options) {
  const ModelConfig& c = ckpt.config;
  if (batch.seq_len == 0 || batch.sequences == 0) {
    fail(ErrorCode::kInput, "forward: empty batch");
  }
  if (batch.tokens.size() != batch.sequences * batch.seq_len) {
    fail(ErrorCode::kInput, "forward: batch holds " + std::to_string(batch.tokens.size()) +
                                " tokens, expected " +
                                std::to_string(batch.sequences * batch.seq_len));
  }
  if (batch.seq_len > c.seq_len) {
    fail(ErrorCode::kInput, "forward: sequence length " + std::to_string(batch.seq_len) +
                                " exceeds model seq_len " + std::to_string(c.seq_len));
  }
  const std::size_t hd = c.head_dim();
  const AttentionGeometry geom{batch.sequences, batch.seq_len, c.heads, c.kv_heads, hd};

  ForwardResult result;
  Tensor h = embedding(ckpt.at(names::kEmbedding), batch.tokens);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = names::layer(l);
    const Tensor a = rmsnorm(h, ckpt.at(p + ".attention_norm"), c.norm_eps);
    Tensor q = matmul(a, ckpt.at(p + ".attention.wq"));
    Tensor k = matmul(a, ckpt.at(p + ".attention.wk"));
    const Tensor v = matmul(a, ckpt.at(p + ".attention.wv"));
    if (c.positional == Positional::kRotary) {
      q = rope(q, batch.sequences, batch.seq_len, c.heads, hd, c.rope_theta);
      k = rope(k, batch.sequences, batch.seq_len, c.kv_heads, hd, c.rope_theta);
    }
    h = add(h, matmul(causal_attention(q, k, v, geom), ckpt.at(p + ".attention.wo")));

    const Tensor f = rmsnorm(h, ckpt.at(p + ".ffn_norm"), c.norm_eps);
    Tensor out;
    LayerTrace trace;
    if (ckpt.is_moe_layer(l)) {
      const GateConfig& gate = ckpt.moe->gate;
      std::optional<Rng> rng;
      if (options.training && gate.noise_enabled) {
        rng.emplace(options.noise_seed, options.noise_stream * 65536 + l);
      }
      MoEOutput moe = moe_forward(f, moe_layer_view(ckpt, l), gate, rng ? &*rng : nullptr);
      out = moe.y;
      result.routing.push_back({l, moe.stats});
      if (moe.aux_loss.defined()) {
        result.aux_loss = result.aux_loss.defined() ? add(result.aux_loss, moe.aux_loss)
                                                    : moe.aux_loss;
      }
      if (options.keep_trace) {
        trace.gates = std::move(moe.gates);
        trace.token_dropped = std::move(moe.token_dropped);
      }
    } else {
      out = ffn_forward(f, dense_ffn_view(ckpt, l));
    }
    if (options.keep_trace) {
      trace.ffn_input = f;
      trace.ffn_output = out;
      result.trace.push_back(std::move(trace));
    }
    h = add(h, out);
  }
  const Tensor final_h = rmsnorm(h, ckpt.at(names::kFinalNorm), c.norm_eps);
  result.logits = matmul(final_h, ckpt.at(names::kOutput));
  return result;
}

Tensor forward_logits(const Checkpoint& ckpt, std::span<const int> tokens) {
  Batch batch{std::vector<int>(tokens.begin(), tokens.end()), 1, tokens.size()};
  return forward(ckpt, batch).logits;
}

}  // namespace moeup

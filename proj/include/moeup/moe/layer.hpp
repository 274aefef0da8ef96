// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_MOE_LAYER_HPP_
#define MOEUP_MOE_LAYER_HPP_

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "moeup/core/rng.hpp"
#include "moeup/core/tensor.hpp"
#include "moeup/moe/gating.hpp"

namespace moeup {

struct RoutingStats {
  std::vector<std::size_t> assigned;  // per expert, after capacity
  std::size_t dropped = 0;            // slots lost to capacity
  std::size_t routed_slots = 0;       // tokens * k
  std::vector<double> gate_mass;      // per expert, sum of gates before drops

  double drop_rate() const;
  // Entropy (nats) of the assigned-slot distribution over experts.
  double load_entropy() const;
};

struct Dispatch {
  // Tokens kept by each expert, ascending token order.
  std::vector<std::vector<std::size_t>> expert_tokens;
  // (token, expert) slots removed by the capacity limit.
  std::vector<std::pair<std::size_t, std::size_t>> dropped;
  RoutingStats stats;
};

// Assigns every selected (token, expert) slot unless the expert already holds
// `capacity` slots. kPosition keeps earlier tokens; kScore keeps larger gates
// and falls back to position on ties.
Dispatch dispatch(const Gates& gates, std::optional<std::size_t> capacity,
                  DropPolicy policy);

struct ExpertWeights {
  Tensor w1;  // gate projection, hidden x ffn
  Tensor w2;  // down projection, ffn x hidden
  Tensor w3;  // up projection, hidden x ffn
};

// SwiGLU: (silu(x W1) * (x W3)) W2.
Tensor ffn_forward(const Tensor& x, const ExpertWeights& weights);

struct MoELayer {
  RouterParams router;
  std::vector<ExpertWeights> experts;
};

struct MoEOutput {
  Tensor y;
  Gates gates;
  RoutingStats stats;
  // 1 for tokens that lost at least one slot to the capacity limit.
  std::vector<std::uint8_t> token_dropped;
  // Undefined unless cfg.importance_loss_coef > 0.
  Tensor aux_loss;
};

// y_t = sum over kept slots of gate[t, e] * E_e(x_t). Router noise is drawn
// from `noise_rng` when cfg.noise_enabled and the pointer is non-null.
MoEOutput moe_forward(const Tensor& x, const MoELayer& layer,
                      const GateConfig& cfg, Rng* noise_rng);

void write_routing_csv_header(std::ostream& os, std::size_t num_experts);
void write_routing_csv_row(std::ostream& os, std::size_t step,
                           std::size_t layer, const RoutingStats& stats);

}  // namespace moeup

#endif  // MOEUP_MOE_LAYER_HPP_

// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_MOE_GATING_HPP_
#define MOEUP_MOE_GATING_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeup/config/json_io.hpp"
#include "moeup/core/rng.hpp"
#include "moeup/core/tensor.hpp"

namespace moeup {

enum class RouterType { kMixtral, kSt };
enum class DropPolicy { kPosition, kScore };

std::string to_string(RouterType type);
std::string to_string(DropPolicy policy);
RouterType parse_router_type(const std::string& text);
DropPolicy parse_drop_policy(const std::string& text);

struct GateConfig {
  std::size_t num_experts = 8;
  std::size_t top_k = 2;
  RouterType router_type = RouterType::kMixtral;
  // Noisy top-k gating; only ever applied in training mode.
  bool noise_enabled = false;
  // std::nullopt means dropless.
  std::optional<double> capacity_factor;
  DropPolicy drop_policy = DropPolicy::kPosition;
  // Weight of the optional importance (CV^2) penalty; 0 disables it.
  double importance_loss_coef = 0.0;

  bool dropless() const { return !capacity_factor.has_value(); }
  // Throws kConfig on 1 <= k <= N or cf > 0 violations.
  void validate() const;
};

struct RouterParams {
  Tensor w_gate;   // hidden x N
  Tensor w_noise;  // hidden x N
};

// A vector with an explicit keep flag per entry; a cleared flag stands for
// the -inf sentinel of KeepTopK.
struct MaskedVector {
  std::vector<double> values;
  std::vector<std::uint8_t> keep;
};

// Indices of the k largest entries, largest first, lowest index on ties.
std::vector<std::size_t> top_k_indices(std::span<const double> v, std::size_t k);

MaskedVector keep_top_k(std::span<const double> v, std::size_t k);

// H = x W_g, plus z * softplus(x W_noise) when noise is enabled, where z is
// drawn from `rng` in row-major (token, expert) order.
Tensor router_logits(const Tensor& x, const RouterParams& params,
                     bool noise_enabled, Rng* rng);

// Per-token gates plus the top-k selection mask (T x N, row-major).
struct Gates {
  Tensor values;
  std::vector<std::uint8_t> selected;
};

// Softmax over the top-k logits; rows sum to 1.
Gates gate_mixtral(const Tensor& logits, std::size_t k);
// Softmax over all N, then everything outside the top-k zeroed. No
// renormalisation: rows sum to less than 1 when k < N.
Gates gate_st(const Tensor& logits, std::size_t k);
Gates compute_gates(const Tensor& logits, std::size_t k, RouterType type);

// ceil(tokens / N * cf); std::nullopt (unbounded) when dropless.
std::optional<std::size_t> expert_capacity(std::size_t tokens_per_batch,
                                           std::size_t num_experts,
                                           std::optional<double> cf);

Json to_json(const GateConfig& cfg);
// Keys: num_experts, top_k, router_type, noise, capacity_factor (number or
// "dropless"), drop_policy, importance_loss_coef.
GateConfig gate_config_from_json(const Json& j, GateConfig defaults = {});

// coef * CV(importance)^2 with importance_e = sum_t gate[t, e].
Tensor importance_loss(const Tensor& gates, double coef);

}  // namespace moeup

#endif  // MOEUP_MOE_GATING_HPP_

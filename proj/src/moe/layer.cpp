// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/moe/layer.hpp"

#include <algorithm>
#include <cmath>

#include "moeup/core/error.hpp"
#include "moeup/core/ops.hpp"

namespace moeup {

double RoutingStats::drop_rate() const {
  return routed_slots == 0 ? 0.0
                           : static_cast<double>(dropped) / static_cast<double>(routed_slots);
}

double RoutingStats::load_entropy() const {
  std::size_t total = 0;
  for (std::size_t a : assigned) total += a;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (std::size_t a : assigned) {
    if (a == 0) continue;
    const double p = static_cast<double>(a) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

Dispatch dispatch(const Gates& gates, std::optional<std::size_t> capacity,
                  DropPolicy policy) {
  const std::size_t t = gates.values.rows(), n = gates.values.cols();
  const auto g = gates.values.data();
  Dispatch out;
  out.expert_tokens.resize(n);
  out.stats.assigned.assign(n, 0);
  out.stats.gate_mass.assign(n, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < t; ++i) {
      out.stats.gate_mass[e] += g[i * n + e];
      if (gates.selected[i * n + e]) candidates.push_back(i);
    }
    out.stats.routed_slots += candidates.size();
    if (capacity && candidates.size() > *capacity) {
      if (policy == DropPolicy::kScore) {
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](std::size_t a, std::size_t b) {
                           return g[a * n + e] > g[b * n + e];
                         });
      }
      for (std::size_t j = *capacity; j < candidates.size(); ++j) {
        out.dropped.emplace_back(candidates[j], e);
      }
      candidates.resize(*capacity);
      std::sort(candidates.begin(), candidates.end());
    }
    out.stats.assigned[e] = candidates.size();
    out.expert_tokens[e] = std::move(candidates);
  }
  out.stats.dropped = out.dropped.size();
  std::sort(out.dropped.begin(), out.dropped.end());
  return out;
}

Tensor ffn_forward(const Tensor& x, const ExpertWeights& w) {
  return matmul(mul(silu(matmul(x, w.w1)), matmul(x, w.w3)), w.w2);
}

MoEOutput moe_forward(const Tensor& x, const MoELayer& layer,
                      const GateConfig& cfg, Rng* noise_rng) {
  cfg.validate();
  if (layer.experts.size() != cfg.num_experts) {
    fail(ErrorCode::kConfig, "moe layer has " + std::to_string(layer.experts.size()) +
                                 " experts, gate config says " +
                                 std::to_string(cfg.num_experts));
  }
  const std::size_t t = x.rows(), d = x.cols();
  const bool noisy = cfg.noise_enabled && noise_rng != nullptr;
  const Tensor logits = router_logits(x, layer.router, noisy, noise_rng);

  MoEOutput out;
  out.gates = compute_gates(logits, cfg.top_k, cfg.router_type);
  const auto capacity = expert_capacity(t, cfg.num_experts, cfg.capacity_factor);
  Dispatch routed = dispatch(out.gates, capacity, cfg.drop_policy);

  Tensor y;
  for (std::size_t e = 0; e < cfg.num_experts; ++e) {
    const auto& rows = routed.expert_tokens[e];
    if (rows.empty()) continue;
    const Tensor xe = gather_rows(x, rows);
    const Tensor he = ffn_forward(xe, layer.experts[e]);
    const Tensor ye = scale_rows(he, gather_column(out.gates.values, rows, e));
    const Tensor placed = scatter_rows(ye, rows, t);
    y = y.defined() ? add(y, placed) : placed;
  }
  out.y = y.defined() ? y : Tensor::zeros({t, d});
  out.token_dropped.assign(t, 0);
  for (const auto& [token, expert] : routed.dropped) out.token_dropped[token] = 1;
  out.stats = std::move(routed.stats);
  if (cfg.importance_loss_coef > 0.0) {
    out.aux_loss = importance_loss(out.gates.values, cfg.importance_loss_coef);
  }
  return out;
}

void write_routing_csv_header(std::ostream& os, std::size_t num_experts) {
  os << "step,layer";
  for (std::size_t e = 0; e < num_experts; ++e) os << ",assigned_" << e;
  os << ",dropped,drop_rate";
  for (std::size_t e = 0; e < num_experts; ++e) os << ",gate_mass_" << e;
  os << '\n';
}

void write_routing_csv_row(std::ostream& os, std::size_t step,
                           std::size_t layer, const RoutingStats& stats) {
  os << step << ',' << layer;
  for (std::size_t a : stats.assigned) os << ',' << a;
  os << ',' << stats.dropped << ',' << stats.drop_rate();
  for (double m : stats.gate_mass) os << ',' << m;
  os << '\n';
}

}  // namespace moeup

// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/moe/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moeup/core/error.hpp"
#include "moeup/core/ops.hpp"

namespace moeup {

std::string to_string(RouterType type) {
  return type == RouterType::kMixtral ? "mixtral" : "st";
}

std::string to_string(DropPolicy policy) {
  return policy == DropPolicy::kPosition ? "position" : "score";
}

RouterType parse_router_type(const std::string& text) {
  if (text == "mixtral") return RouterType::kMixtral;
  if (text == "st") return RouterType::kSt;
  fail(ErrorCode::kConfig, "unknown router_type '" + text + "' (mixtral|st)");
}

DropPolicy parse_drop_policy(const std::string& text) {
  if (text == "position") return DropPolicy::kPosition;
  if (text == "score") return DropPolicy::kScore;
  fail(ErrorCode::kConfig, "unknown drop_policy '" + text + "' (position|score)");
}

void GateConfig::validate() const {
  if (num_experts < 1) fail(ErrorCode::kConfig, "num_experts must be >= 1");
  if (top_k < 1 || top_k > num_experts) {
    fail(ErrorCode::kConfig, "top_k must satisfy 1 <= k <= N, got k=" +
                                 std::to_string(top_k) + ", N=" +
                                 std::to_string(num_experts));
  }
  if (capacity_factor && !(*capacity_factor > 0.0 && std::isfinite(*capacity_factor))) {
    fail(ErrorCode::kConfig, "capacity_factor must be positive and finite");
  }
  if (importance_loss_coef < 0.0) {
    fail(ErrorCode::kConfig, "importance_loss_coef must be >= 0");
  }
}

Json to_json(const GateConfig& cfg) {
  Json j;
  j["num_experts"] = cfg.num_experts;
  j["top_k"] = cfg.top_k;
  j["router_type"] = to_string(cfg.router_type);
  j["noise"] = cfg.noise_enabled;
  if (cfg.capacity_factor) {
    j["capacity_factor"] = *cfg.capacity_factor;
  } else {
    j["capacity_factor"] = "dropless";
  }
  j["drop_policy"] = to_string(cfg.drop_policy);
  j["importance_loss_coef"] = cfg.importance_loss_coef;
  return j;
}

GateConfig gate_config_from_json(const Json& j, GateConfig cfg) {
  JsonSection s(j, "gate");
  s.read("num_experts", cfg.num_experts);
  s.read("top_k", cfg.top_k);
  std::string router = to_string(cfg.router_type);
  s.read("router_type", router);
  cfg.router_type = parse_router_type(router);
  s.read("noise", cfg.noise_enabled);
  if (const Json* cf = s.raw("capacity_factor")) {
    if (cf->is_string() && cf->get<std::string>() == "dropless") {
      cfg.capacity_factor.reset();
    } else if (cf->is_number()) {
      cfg.capacity_factor = cf->get<double>();
    } else {
      fail(ErrorCode::kConfig, "gate.capacity_factor must be a number or \"dropless\"");
    }
  }
  std::string policy = to_string(cfg.drop_policy);
  s.read("drop_policy", policy);
  cfg.drop_policy = parse_drop_policy(policy);
  s.read("importance_loss_coef", cfg.importance_loss_coef);
  s.finish();
  return cfg;
}

std::vector<std::size_t> top_k_indices(std::span<const double> v, std::size_t k) {
  if (k < 1 || k > v.size()) {
    fail(ErrorCode::kConfig, "top-k: k=" + std::to_string(k) +
                                 " outside [1, " + std::to_string(v.size()) + "]");
  }
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), [&](std::size_t a, std::size_t b) {
                      return v[a] > v[b] || (v[a] == v[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

MaskedVector keep_top_k(std::span<const double> v, std::size_t k) {
  MaskedVector out{std::vector<double>(v.begin(), v.end()),
                   std::vector<std::uint8_t>(v.size(), 0)};
  for (std::size_t i : top_k_indices(v, k)) out.keep[i] = 1;
  return out;
}

Tensor router_logits(const Tensor& x, const RouterParams& params,
                     bool noise_enabled, Rng* rng) {
  Tensor logits = matmul(x, params.w_gate);
  if (!noise_enabled) return logits;
  if (rng == nullptr) fail(ErrorCode::kConfig, "router noise needs an rng");
  std::vector<double> z(logits.numel());
  for (double& value : z) value = rng->normal();
  const Tensor normals = Tensor::from(logits.shape(), std::move(z));
  return add(logits, mul(normals, softplus(matmul(x, params.w_noise))));
}

namespace {

void require_logits(const Tensor& logits) {
  if (logits.rank() != 2) {
    fail(ErrorCode::kDimension, "gate: logits must be T x N, got " +
                                    shape_str(logits.shape()));
  }
}

}  // namespace

Gates gate_mixtral(const Tensor& logits, std::size_t k) {
  require_logits(logits);
  const std::size_t t = logits.rows(), n = logits.cols();
  std::vector<double> gates(t * n, 0.0);
  std::vector<std::uint8_t> selected(t * n, 0);
  for (std::size_t i = 0; i < t; ++i) {
    const auto row = logits.data().subspan(i * n, n);
    const MaskedVector masked = keep_top_k(row, k);
    const auto g = softmax(masked.values, masked.keep);
    std::copy(g.begin(), g.end(), gates.begin() + i * n);
    std::copy(masked.keep.begin(), masked.keep.end(), selected.begin() + i * n);
  }
  std::vector<double> saved = gates;
  Tensor values = make_result(
      {t, n}, std::move(gates), {logits},
      [t, n, g = std::move(saved)](Tensor::Node& self) {
        auto dh = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < t; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * self.grad[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            dh[i * n + j] += g[i * n + j] * (self.grad[i * n + j] - dot);
          }
        }
      });
  return {std::move(values), std::move(selected)};
}

Gates gate_st(const Tensor& logits, std::size_t k) {
  require_logits(logits);
  const std::size_t t = logits.rows(), n = logits.cols();
  std::vector<double> probs(t * n), gates(t * n, 0.0);
  std::vector<std::uint8_t> selected(t * n, 0);
  for (std::size_t i = 0; i < t; ++i) {
    const auto s = softmax(logits.data().subspan(i * n, n));
    std::copy(s.begin(), s.end(), probs.begin() + i * n);
    for (std::size_t j : top_k_indices(s, k)) {
      selected[i * n + j] = 1;
      gates[i * n + j] = s[j];
    }
  }
  Tensor values = make_result(
      {t, n}, std::move(gates), {logits},
      [t, n, s = std::move(probs), keep = selected](Tensor::Node& self) {
        auto dh = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < t; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (keep[i * n + j]) dot += s[i * n + j] * self.grad[i * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double upstream = keep[i * n + j] ? self.grad[i * n + j] : 0.0;
            dh[i * n + j] += s[i * n + j] * (upstream - dot);
          }
        }
      });
  return {std::move(values), std::move(selected)};
}

Gates compute_gates(const Tensor& logits, std::size_t k, RouterType type) {
  return type == RouterType::kMixtral ? gate_mixtral(logits, k) : gate_st(logits, k);
}

std::optional<std::size_t> expert_capacity(std::size_t tokens_per_batch,
                                           std::size_t num_experts,
                                           std::optional<double> cf) {
  if (tokens_per_batch < 1) fail(ErrorCode::kInput, "expert_capacity: no tokens");
  if (num_experts < 1) fail(ErrorCode::kConfig, "expert_capacity: no experts");
  if (!cf) return std::nullopt;
  if (!(*cf > 0.0)) fail(ErrorCode::kConfig, "capacity_factor must be positive");
  const double exact = static_cast<double>(tokens_per_batch) /
                       static_cast<double>(num_experts) * *cf;
  // Snap values that are integers up to rounding noise, e.g. 100/3*3.
  const double nearest = std::round(exact);
  const double value =
      std::abs(exact - nearest) <= 1e-9 * std::max(1.0, exact) ? nearest : std::ceil(exact);
  return static_cast<std::size_t>(std::max(1.0, value));
}

Tensor importance_loss(const Tensor& gates, double coef) {
  require_logits(gates);
  const std::size_t t = gates.rows(), n = gates.cols();
  std::vector<double> imp(n, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < n; ++j) imp[j] += gates.data()[i * n + j];
  }
  const double mean = std::accumulate(imp.begin(), imp.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : imp) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double m2 = std::max(mean * mean, 1e-300);
  const double loss = coef * var / m2;
  return make_result({}, {loss}, {gates},
                     [=, imp = std::move(imp)](Tensor::Node& self) {
                       auto dg = self.parents[0]->ensure_grad();
                       const double nn = static_cast<double>(n);
                       for (std::size_t j = 0; j < n; ++j) {
                         const double dimp = coef * (2.0 * (imp[j] - mean) / (nn * m2) -
                                                     2.0 * var / (m2 * mean * nn));
                         for (std::size_t i = 0; i < t; ++i) {
                           dg[i * n + j] += self.grad[0] * dimp;
                         }
                       }
                     });
}

}  // namespace moeup

// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "moeup/core/grad_check.hpp"
#include "moeup/core/ops.hpp"
#include "moeup/moe/gating.hpp"
#include "moeup/moe/layer.hpp"
#include "test_util.hpp"

namespace moeup {
namespace {

using testing::error_of;
using testing::random_tensor;

std::vector<double> row(const Tensor& t, std::size_t i) {
  return {t.data().begin() + i * t.cols(), t.data().begin() + (i + 1) * t.cols()};
}

double row_sum(const Tensor& t, std::size_t i) {
  const auto r = row(t, i);
  return std::accumulate(r.begin(), r.end(), 0.0);
}

TEST(KeepTopK, WorkedExample) {
  const std::vector<double> v{1, 3, 2, 0};
  const auto m = keep_top_k(v, 2);
  EXPECT_EQ(m.keep, (std::vector<std::uint8_t>{0, 1, 1, 0}));
  EXPECT_EQ(m.values[1], 3.0);
  EXPECT_EQ(m.values[2], 2.0);
}

TEST(KeepTopK, FullKIsIdentity) {
  const std::vector<double> v{0.5, -1, 2, 7};
  const auto m = keep_top_k(v, 4);
  EXPECT_EQ(m.keep, (std::vector<std::uint8_t>{1, 1, 1, 1}));
  EXPECT_EQ(m.values, v);
}

TEST(KeepTopK, TiesGoToLowestIndex) {
  const std::vector<double> v{5, 5, 5, 5};
  EXPECT_EQ(keep_top_k(v, 2).keep, (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_EQ(top_k_indices(std::vector<double>{1, 4, 4, 0, 4}, 2),
            (std::vector<std::size_t>{1, 2}));
}

TEST(KeepTopK, KOutOfRangeIsConfigError) {
  const std::vector<double> v{1, 2};
  EXPECT_EQ(error_of([&] { keep_top_k(v, 0); }), ErrorCode::kConfig);
  EXPECT_EQ(error_of([&] { keep_top_k(v, 3); }), ErrorCode::kConfig);
}

TEST(KeepTopK, KeepsExactlyKOnRandomInputs) {
  Rng rng(1, 0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const std::size_t k = 1 + rng.below(n);
    std::vector<double> v(n);
    // Coarse values so ties are frequent.
    for (double& x : v) x = static_cast<double>(rng.below(4));
    const auto m = keep_top_k(v, k);
    ASSERT_EQ(std::accumulate(m.keep.begin(), m.keep.end(), std::size_t{0}), k);
    // Every kept entry beats every dropped one, or ties with a higher index.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (m.keep[i] && !m.keep[j]) {
          ASSERT_TRUE(v[i] > v[j] || (v[i] == v[j] && i < j));
        }
      }
    }
  }
}

TEST(GateMixtral, Examples) {
  const Gates eq = gate_mixtral(Tensor::from({1, 4}, {2, 2, 2, 2}), 2);
  EXPECT_EQ(row(eq.values, 0), (std::vector<double>{0.5, 0.5, 0, 0}));

  const Gates g = gate_mixtral(Tensor::from({1, 4}, {1, 3, 2, 0}), 2);
  EXPECT_EQ(g.values.data()[0], 0.0);
  EXPECT_NEAR(g.values.data()[1], 0.7311, 1e-4);
  EXPECT_NEAR(g.values.data()[2], 0.2689, 1e-4);
  EXPECT_EQ(g.values.data()[3], 0.0);

  const Gates one = gate_mixtral(Tensor::from({1, 4}, {1, 3, 2, 0}), 1);
  EXPECT_EQ(row(one.values, 0), (std::vector<double>{0, 1, 0, 0}));
}

TEST(GateSt, Examples) {
  const Gates eq = gate_st(Tensor::full({1, 8}, 0.3), 2);
  EXPECT_NEAR(eq.values.data()[0], 0.125, 1e-15);
  EXPECT_NEAR(eq.values.data()[1], 0.125, 1e-15);
  EXPECT_NEAR(row_sum(eq.values, 0), 0.25, 1e-15);

  const std::vector<double> h{1, 3, 2, 0};
  const Gates all = gate_st(Tensor::from({1, 4}, h), 4);
  const auto p = softmax(h);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(all.values.data()[i], p[i], 1e-15);

  const Gates two = gate_st(Tensor::from({1, 4}, h), 2);
  const double z = std::exp(1.0) + std::exp(3.0) + std::exp(2.0) + 1.0;
  EXPECT_EQ(two.values.data()[0], 0.0);
  EXPECT_NEAR(two.values.data()[1], std::exp(3.0) / z, 1e-15);
  EXPECT_NEAR(two.values.data()[2], std::exp(2.0) / z, 1e-15);
  EXPECT_EQ(two.values.data()[3], 0.0);
}

TEST(Gates, RowSumProperties) {
  Rng rng(2, 0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(9);
    const std::size_t k = 1 + rng.below(n);
    const Tensor h = random_tensor({5, n}, 100 + trial, 3.0);
    const Gates mix = gate_mixtral(h, k);
    const Gates st = gate_st(h, k);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(row_sum(mix.values, i), 1.0, 1e-12);
      const double s = row_sum(st.values, i);
      if (k == n) {
        EXPECT_NEAR(s, 1.0, 1e-12);
      } else {
        EXPECT_LT(s, 1.0);
      }
    }
    if (k == 1) {
      for (std::size_t i = 0; i < 5; ++i) {
        const auto a = row(mix.values, i), b = row(st.values, i);
        EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(),
                  std::max_element(b.begin(), b.end()) - b.begin());
      }
    }
  }
}

TEST(Gates, Gradients) {
  Tensor h = random_tensor({3, 5}, 3, 1.0, true);
  const Tensor w = random_tensor({3, 5}, 4);
  for (RouterType type : {RouterType::kMixtral, RouterType::kSt}) {
    const auto report = grad_check(
        [&] { return sum(mul(compute_gates(h, 2, type).values, w)); }, {{"H", h}}, 1e-5,
        1e-6);
    EXPECT_TRUE(report.pass) << to_string(type) << " " << report.max_rel_error;
  }
}

TEST(RouterLogits, NoiseOffIsLinear) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  // Selects coordinates 2 and 0.
  const RouterParams p{Tensor::from({3, 2}, {0, 1, 0, 0, 1, 0}), Tensor::zeros({3, 2})};
  const Tensor h = router_logits(x, p, false, nullptr);
  EXPECT_EQ(row(h, 0), (std::vector<double>{3, 1}));
  EXPECT_EQ(row(h, 1), (std::vector<double>{6, 4}));
}

TEST(RouterLogits, ZeroNoiseWeightsScaleNormalsByLn2) {
  const Tensor x = random_tensor({4, 3}, 5);
  const RouterParams p{random_tensor({3, 5}, 6), Tensor::zeros({3, 5})};
  Rng rng(77, 3);
  const Tensor noisy = router_logits(x, p, true, &rng);
  const Tensor clean = router_logits(x, p, false, nullptr);
  for (std::size_t i = 0; i < 20; ++i) {
    const double expect = clean.data()[i] + std::log(2.0) * Rng(77, 3).normal_at(i);
    EXPECT_NEAR(noisy.data()[i], expect, 1e-14);
  }
  Rng again(77, 3);
  EXPECT_TRUE(bitwise_equal(router_logits(x, p, true, &again), noisy));
}

TEST(RouterLogits, NoiseMagnitudeDistribution) {
  const std::size_t t = 1000, n = 100;
  const Tensor x = Tensor::zeros({t, 2});
  const RouterParams p{Tensor::zeros({2, n}), Tensor::zeros({2, n})};
  Rng rng(9, 0);
  const Tensor h = router_logits(x, p, true, &rng);
  double mean_abs = 0;
  for (double v : h.data()) mean_abs += std::abs(v);
  mean_abs /= static_cast<double>(t * n);
  const double expected = std::sqrt(2.0 / std::acos(-1.0)) * std::log(2.0);
  EXPECT_NEAR(mean_abs / expected, 1.0, 0.02);
}

TEST(RouterLogits, GradientThroughNoiseWeights) {
  const Tensor x = random_tensor({3, 4}, 7);
  Tensor wg = random_tensor({4, 3}, 8, 0.5, true);
  Tensor wn = random_tensor({4, 3}, 9, 0.5, true);
  const Tensor w = random_tensor({3, 3}, 10);
  auto loss = [&] {
    Rng rng(1, 1);
    return sum(mul(router_logits(x, {wg, wn}, true, &rng), w));
  };
  const auto report = grad_check(loss, {{"w_gate", wg}, {"w_noise", wn}}, 1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(Capacity, Formula) {
  EXPECT_EQ(expert_capacity(64, 8, 2.0), 16u);
  EXPECT_EQ(expert_capacity(100, 8, 1.0), 13u);
  EXPECT_EQ(expert_capacity(64, 8, std::nullopt), std::nullopt);
  // 10/3 * 0.3 is 1 up to rounding noise.
  EXPECT_EQ(expert_capacity(10, 3, 0.3), 1u);
  EXPECT_EQ(expert_capacity(1, 8, 0.01), 1u);
}

Gates one_hot_gates(std::size_t t, std::size_t n, const std::vector<std::size_t>& expert,
                    const std::vector<double>& value) {
  std::vector<double> g(t * n, 0.0);
  std::vector<std::uint8_t> sel(t * n, 0);
  for (std::size_t i = 0; i < t; ++i) {
    g[i * n + expert[i]] = value[i];
    sel[i * n + expert[i]] = 1;
  }
  return {Tensor::from({t, n}, g), sel};
}

TEST(Dispatch, LargeCapacityDropsNothing) {
  const Gates g = gate_mixtral(random_tensor({10, 4}, 11), 2);
  const Dispatch d = dispatch(g, 20, DropPolicy::kPosition);
  EXPECT_EQ(d.stats.dropped, 0u);
  EXPECT_EQ(d.stats.routed_slots, 20u);
}

TEST(Dispatch, PositionPolicyKeepsEarliestTokens) {
  const Gates g = one_hot_gates(5, 2, {0, 0, 0, 0, 0}, {0.1, 0.9, 0.5, 0.8, 0.7});
  const Dispatch d = dispatch(g, 2, DropPolicy::kPosition);
  EXPECT_EQ(d.expert_tokens[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(d.stats.dropped, 3u);
}

TEST(Dispatch, ScorePolicyKeepsHighestGates) {
  const Gates g = one_hot_gates(3, 2, {0, 0, 0}, {0.9, 0.5, 0.7});
  const Dispatch d = dispatch(g, 2, DropPolicy::kScore);
  EXPECT_EQ(d.expert_tokens[0], (std::vector<std::size_t>{0, 2}));
  ASSERT_EQ(d.dropped.size(), 1u);
  EXPECT_EQ(d.dropped[0], (std::pair<std::size_t, std::size_t>{1, 0}));
}

TEST(Dispatch, ScorePolicyBreaksTiesByPosition) {
  const Gates g = one_hot_gates(4, 1, {0, 0, 0, 0}, {0.5, 0.5, 0.9, 0.5});
  const Dispatch d = dispatch(g, 2, DropPolicy::kScore);
  EXPECT_EQ(d.expert_tokens[0], (std::vector<std::size_t>{0, 2}));
}

TEST(Dispatch, CapacityPropertiesOnRandomBatches) {
  Rng rng(12, 0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t t = 1 + rng.below(40), n = 2 + rng.below(7);
    const std::size_t k = 1 + rng.below(n);
    const Gates g = compute_gates(random_tensor({t, n}, 1000 + trial, 2.0), k,
                                  trial % 2 ? RouterType::kSt : RouterType::kMixtral);
    const DropPolicy policy = trial % 3 ? DropPolicy::kPosition : DropPolicy::kScore;
    std::size_t previous = t * k + 1;
    for (double cf : {0.25, 0.5, 1.0, 1.5, 2.0, 4.0}) {
      const auto cap = expert_capacity(t, n, cf);
      const Dispatch d = dispatch(g, cap, policy);
      std::size_t assigned = 0;
      for (std::size_t a : d.stats.assigned) {
        ASSERT_LE(a, *cap);
        assigned += a;
      }
      ASSERT_EQ(assigned + d.stats.dropped, t * k);
      ASSERT_LE(d.stats.dropped, previous);
      previous = d.stats.dropped;
    }
    EXPECT_EQ(dispatch(g, std::nullopt, policy).stats.dropped, 0u);
  }
}

MoELayer identical_experts(std::size_t d, std::size_t f, std::size_t n,
                           const Tensor& router, std::uint64_t seed) {
  const ExpertWeights base{random_tensor({d, f}, seed, 0.3), random_tensor({f, d}, seed + 1, 0.3),
                           random_tensor({d, f}, seed + 2, 0.3)};
  MoELayer layer;
  layer.router = {router, Tensor::zeros(router.shape())};
  for (std::size_t e = 0; e < n; ++e) layer.experts.push_back(base);
  return layer;
}

TEST(MoEForward, IdenticalExpertsMixtralMatchesDense) {
  const std::size_t d = 6, f = 10, n = 8;
  const Tensor x = random_tensor({12, d}, 13);
  for (std::size_t k : {1, 2, 8}) {
    const MoELayer layer = identical_experts(d, f, n, random_tensor({d, n}, 14), 20);
    GateConfig cfg;
    cfg.num_experts = n;
    cfg.top_k = k;
    cfg.noise_enabled = true;
    Rng rng(3, 3);
    const MoEOutput out = moe_forward(x, layer, cfg, &rng);
    const Tensor dense = ffn_forward(x, layer.experts[0]);
    EXPECT_LE(testing::rel_err(out.y.data(), dense.data()), 1e-12) << "k=" << k;
  }
}

TEST(MoEForward, StUniformLogitsScaleDenseByGateSum) {
  const std::size_t d = 6, f = 10, n = 8;
  const Tensor x = random_tensor({7, d}, 15);
  const MoELayer layer = identical_experts(d, f, n, Tensor::zeros({d, n}), 30);
  GateConfig cfg;
  cfg.router_type = RouterType::kSt;
  const MoEOutput out = moe_forward(x, layer, cfg, nullptr);
  const Tensor dense = scale(ffn_forward(x, layer.experts[0]), 0.25);
  EXPECT_LE(testing::rel_err(out.y.data(), dense.data()), 1e-12);
}

TEST(MoEForward, DroppedSlotContributesZero) {
  const std::size_t d = 4, f = 6, n = 2;
  const Tensor x = random_tensor({4, d}, 16);
  // Every token prefers expert 0 with k=1; capacity 1 keeps only token 0.
  std::vector<double> wg(d * n, 0.0);
  MoELayer layer = identical_experts(d, f, n, Tensor::from({d, n}, wg), 40);
  GateConfig cfg;
  cfg.num_experts = n;
  cfg.top_k = 1;
  cfg.capacity_factor = 0.5;
  const MoEOutput out = moe_forward(x, layer, cfg, nullptr);
  const Tensor dense = ffn_forward(x, layer.experts[0]);
  EXPECT_EQ(out.token_dropped, (std::vector<std::uint8_t>{0, 1, 1, 1}));
  for (std::size_t c = 0; c < d; ++c) {
    EXPECT_NEAR(out.y.at(0, c), dense.at(0, c), 1e-14);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(out.y.at(i, c), 0.0);
  }
}

TEST(MoEForward, GradientOverRouterAndExperts) {
  const std::size_t d = 4, f = 6, n = 4;
  const Tensor x0 = random_tensor({5, d}, 17);
  Tensor x = x0.clone();
  x.set_requires_grad(true);
  Tensor wg = random_tensor({d, n}, 18, 0.5, true);
  Tensor wn = random_tensor({d, n}, 19, 0.5, true);
  MoELayer layer;
  layer.router = {wg, wn};
  std::vector<NamedParam> params{{"x", x}, {"w_gate", wg}, {"w_noise", wn}};
  for (std::size_t e = 0; e < n; ++e) {
    ExpertWeights w{random_tensor({d, f}, 50 + 3 * e, 0.5, true),
                    random_tensor({f, d}, 51 + 3 * e, 0.5, true),
                    random_tensor({d, f}, 52 + 3 * e, 0.5, true)};
    params.push_back({"expert" + std::to_string(e) + ".w1", w.w1});
    params.push_back({"expert" + std::to_string(e) + ".w2", w.w2});
    params.push_back({"expert" + std::to_string(e) + ".w3", w.w3});
    layer.experts.push_back(w);
  }
  const Tensor probe = random_tensor({5, d}, 20);
  for (RouterType type : {RouterType::kMixtral, RouterType::kSt}) {
    GateConfig cfg;
    cfg.num_experts = n;
    cfg.top_k = 2;
    cfg.router_type = type;
    cfg.noise_enabled = true;
    cfg.capacity_factor = 1.0;
    cfg.importance_loss_coef = 0.1;
    auto loss = [&] {
      Rng rng(5, 0);
      const MoEOutput out = moe_forward(x, layer, cfg, &rng);
      return add(sum(mul(out.y, probe)), out.aux_loss);
    };
    const auto report = grad_check(loss, params, 1e-5, 1e-4);
    EXPECT_TRUE(report.pass) << to_string(type) << " " << report.max_rel_error;
  }
}

TEST(RoutingStats, EntropyAndCsv) {
  RoutingStats s;
  s.assigned = {2, 2, 0, 0};
  s.gate_mass = {1.5, 2.5, 0, 0};
  s.routed_slots = 5;
  s.dropped = 1;
  EXPECT_NEAR(s.load_entropy(), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(s.drop_rate(), 0.2);
  std::ostringstream os;
  write_routing_csv_header(os, 4);
  write_routing_csv_row(os, 7, 1, s);
  EXPECT_EQ(os.str(),
            "step,layer,assigned_0,assigned_1,assigned_2,assigned_3,dropped,drop_rate,"
            "gate_mass_0,gate_mass_1,gate_mass_2,gate_mass_3\n"
            "7,1,2,2,0,0,1,0.2,1.5,2.5,0,0\n");
}

TEST(ImportanceLoss, ZeroForBalancedGates) {
  const Tensor g = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(importance_loss(g, 1.0).item(), 0.0, 1e-15);
  // Importance (1, 0): mean 0.5, variance 0.25, cv^2 = 1.
  const Tensor h = Tensor::from({2, 2}, {1, 0, 0, 0});
  EXPECT_NEAR(importance_loss(h, 2.0).item(), 2.0, 1e-12);
}

TEST(GateConfigJson, RoundTripAndValidation) {
  GateConfig cfg;
  cfg.num_experts = 4;
  cfg.top_k = 1;
  cfg.router_type = RouterType::kSt;
  cfg.capacity_factor = 1.5;
  cfg.drop_policy = DropPolicy::kScore;
  const GateConfig back = gate_config_from_json(to_json(cfg));
  EXPECT_EQ(back.num_experts, 4u);
  EXPECT_EQ(back.router_type, RouterType::kSt);
  EXPECT_EQ(back.capacity_factor, 1.5);
  EXPECT_EQ(back.drop_policy, DropPolicy::kScore);

  EXPECT_TRUE(gate_config_from_json(Json{{"capacity_factor", "dropless"}}).dropless());
  EXPECT_EQ(error_of([] { gate_config_from_json(Json{{"experts", 4}}); }), ErrorCode::kConfig);
  EXPECT_EQ(error_of([] { gate_config_from_json(Json{{"top_k", 9}}); }), ErrorCode::kConfig);
  EXPECT_EQ(error_of([] { gate_config_from_json(Json{{"router_type", "switch"}}); }),
            ErrorCode::kConfig);
}

}  // namespace
}  // namespace moeup

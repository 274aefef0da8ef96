// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moeup/core/grad_check.hpp"
#include "moeup/core/ops.hpp"
#include "moeup/moe/layer.hpp"
#include "moeup/model/transformer.hpp"
#include "moeup/plan/plan.hpp"
#include "moeup/train/train.hpp"
#include "moeup/upcycle/upcycle.hpp"
#include "test_util.hpp"

namespace moeup {
namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "[failed: " << what << "] ";
    pass = pass && ok;
  }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

UpcycleOptions options(std::size_t n, std::size_t k, std::uint64_t seed) {
  UpcycleOptions o;
  o.gate.num_experts = n;
  o.gate.top_k = k;
  o.router_seed = seed;
  return o;
}

Tensor random_logits(Rng& rng, std::size_t t, std::size_t n, double scale) {
  std::vector<double> v(t * n);
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from({t, n}, std::move(v));
}

void initialization_equivalence(Outcome& o) {
  double worst_mixtral = 0.0, least_st = 1e300, worst_scaling = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig c;
    c.positional = seed % 2 ? Positional::kRotary : Positional::kNone;
    const DenseCheckpoint dense = init_dense(c, 1000 + seed, 0.2);
    const auto tokens = testing::random_tokens(32, c.vocab, 2000 + seed);
    const Tensor ref = forward_logits(dense, tokens);

    const MoECheckpoint mixtral = upcycle_full(dense, options(8, 2, seed));
    worst_mixtral = std::max(worst_mixtral, testing::rel_err(forward_logits(mixtral, tokens).data(), ref.data()));

    UpcycleOptions st_opts = options(8, 2, seed);
    st_opts.gate.router_type = RouterType::kSt;
    const MoECheckpoint st = upcycle_full(dense, st_opts);
    ForwardOptions fo;
    fo.keep_trace = true;
    const ForwardResult r = forward(st, Batch{tokens, 1, tokens.size()}, fo);
    least_st = std::min(least_st, testing::rel_err(r.logits.data(), ref.data()));

    for (std::size_t l = 0; l < c.layers; ++l) {
      const LayerTrace& tr = r.trace[l];
      const Tensor dense_out = ffn_forward(tr.ffn_input, dense_ffn_view(dense, l));
      const std::size_t n = tr.gates->values.cols(), d = c.hidden;
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        double gate_sum = 0.0;
        for (std::size_t e = 0; e < n; ++e) gate_sum += tr.gates->values.at(t, e);
        std::vector<double> expect(d);
        for (std::size_t i = 0; i < d; ++i) expect[i] = gate_sum * dense_out.at(t, i);
        worst_scaling = std::max(
            worst_scaling, testing::rel_err(tr.ffn_output.data().subspan(t * d, d), expect));
      }
    }
  }
  o.require(worst_mixtral <= 1e-9, "mixtral logits");
  o.require(least_st > 1e-6, "st mismatch");
  o.require(worst_scaling <= 1e-9, "st gate-sum scaling");
  o.detail << "20 seeds: mixtral max rel err " << sci(worst_mixtral) << " (<= 1e-9); st min rel err "
           << sci(least_st) << " (mismatch); st per-token gate-sum scaling max rel err "
           << sci(worst_scaling) << " (<= 1e-9)";
}

void online_upcycling(Outcome& o) {
  const DenseCheckpoint dense = init_dense(ModelConfig{}, 14);
  const UpcycleOptions opts = options(8, 2, 5);
  const MoECheckpoint full = upcycle_full(dense, opts);
  std::size_t cases = 0;
  for (std::size_t tp : {1, 2}) {
    for (std::size_t ep : {1, 2, 4}) {
      std::vector<Shard> up;
      for (const Shard& s : shard_dense(dense, tp, ep)) up.push_back(upcycle_shard(s, opts));
      const EquivalenceReport r = verify_equivalence(gather_moe(up), full);
      o.require(r.equal, "tp " + std::to_string(tp) + " ep " + std::to_string(ep) + " " +
                             r.first_tensor);
      ++cases;
    }
  }
  o.detail << cases << " (tp, ep) pairs bitwise equal to the whole-model upcycle";
}

void gating_math(Outcome& o) {
  Rng rng(31, 0);
  double mixtral_dev = 0.0, st_full_dev = 0.0, st_min_gap = 1.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(15), t = 1 + rng.below(16);
    const std::size_t k = 1 + rng.below(n);
    const Tensor logits = random_logits(rng, t, n, 3.0);
    const Gates mg = gate_mixtral(logits, k), sg = gate_st(logits, k);
    for (std::size_t i = 0; i < t; ++i) {
      double ms = 0.0, ss = 0.0;
      for (std::size_t e = 0; e < n; ++e) {
        ms += mg.values.at(i, e);
        ss += sg.values.at(i, e);
      }
      mixtral_dev = std::max(mixtral_dev, std::abs(ms - 1.0));
      o.require(ss <= 1.0 + 1e-12, "st row sum above 1");
      if (k == n) {
        st_full_dev = std::max(st_full_dev, std::abs(ss - 1.0));
      } else {
        o.require(ss < 1.0, "st row sum 1 with k < N");
        st_min_gap = std::min(st_min_gap, 1.0 - ss);
      }
    }
  }
  o.require(mixtral_dev <= 1e-12, "mixtral row sums");
  o.require(st_full_dev <= 1e-12, "st row sums at k = N");

  // Heavy ties: values from {0, 1, 2, 3}.
  std::size_t tie_cases = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(12), k = 1 + rng.below(n);
    std::vector<double> v(n);
    for (double& x : v) x = static_cast<double>(rng.below(4));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    const std::set<std::size_t> expect(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    const MaskedVector m = keep_top_k(v, k);
    std::set<std::size_t> kept;
    for (std::size_t i = 0; i < n; ++i) {
      if (m.keep[i]) {
        kept.insert(i);
        o.require(m.values[i] == v[i], "kept value altered");
      }
    }
    o.require(kept == expect, "keep_top_k selection");
    tie_cases += std::set<double>(v.begin(), v.end()).size() < n;
  }

  // Closed form with W_noise = 0: H = x W_g + z * ln 2.
  const std::size_t t = 1000, n = 100;
  const Tensor x = testing::random_tensor({t, 4}, 5);
  const RouterParams p{testing::random_tensor({4, n}, 6), Tensor::zeros({4, n})};
  const Tensor clean = router_logits(x, p, false, nullptr);
  Rng noise(77, 3);
  const Tensor noisy = router_logits(x, p, true, &noise);
  const double ln2 = std::log(2.0);
  double closed_form_dev = 0.0, mean_abs = 0.0;
  for (std::size_t i = 0; i < t * n; ++i) {
    const double shift = noisy.data()[i] - clean.data()[i];
    closed_form_dev = std::max(closed_form_dev, std::abs(shift - ln2 * Rng(77, 3).normal_at(i)));
    mean_abs += std::abs(shift);
  }
  mean_abs /= static_cast<double>(t * n);
  const double expected = std::sqrt(2.0 / std::acos(-1.0)) * ln2;
  const double ratio = mean_abs / expected;
  o.require(closed_form_dev <= 1e-12, "noise closed form");
  o.require(std::abs(ratio - 1.0) <= 0.02, "noise magnitude");
  o.detail << "mixtral |row sum - 1| <= " << sci(mixtral_dev) << "; st k=N |row sum - 1| <= "
           << sci(st_full_dev) << ", k<N min (1 - row sum) " << sci(st_min_gap)
           << "; keep_top_k 2000 cases (" << tie_cases << " with ties); noise mean|dH|/(E|z| ln2) = "
           << sci(ratio) << " over 1e5 draws";
}

void capacity_semantics(Outcome& o) {
  Rng rng(41, 0);
  const std::vector<double> factors{0.25, 0.5, 1.0, 1.25, 1.5, 2.0, 4.0};
  std::size_t total_drops = 0;
  for (int batch = 0; batch < 1000; ++batch) {
    const std::size_t n = 2 + rng.below(7), t = 1 + rng.below(64);
    const std::size_t k = 1 + rng.below(n);
    const Gates g = compute_gates(random_logits(rng, t, n, 2.0), k,
                                  rng.below(2) ? RouterType::kMixtral : RouterType::kSt);
    const DropPolicy policy = rng.below(2) ? DropPolicy::kPosition : DropPolicy::kScore;
    std::size_t previous = t * k + 1;
    for (double cf : factors) {
      const Dispatch d = dispatch(g, expert_capacity(t, n, cf), policy);
      const double bound = std::ceil(static_cast<double>(t) / static_cast<double>(n) * cf);
      std::size_t kept = 0;
      for (const auto& tokens : d.expert_tokens) {
        o.require(static_cast<double>(tokens.size()) <= bound, "expert over capacity");
        kept += tokens.size();
      }
      o.require(kept + d.dropped.size() == t * k, "slot conservation");
      o.require(d.dropped.size() <= previous, "drops increase with cf");
      previous = d.dropped.size();
      total_drops += d.dropped.size();
    }
    o.require(dispatch(g, expert_capacity(t, n, std::nullopt), policy).dropped.empty(),
              "dropless drops");
  }
  const auto cap = expert_capacity(64, 8, 2.0);
  o.require(cap == std::optional<std::size_t>(16), "expert_capacity(64, 8, 2)");
  o.detail << "1000 batches x " << factors.size() << " capacity factors (" << total_drops
           << " drops seen), dropless drops none, expert_capacity(64, 8, 2) = " << cap.value_or(0);
}

void differentiability(Outcome& o) {
  ModelConfig c = testing::tiny_config();
  c.positional = Positional::kRotary;
  const DenseCheckpoint dense = init_dense(c, 51, 0.3);
  UpcycleOptions opts = options(4, 2, 52);
  opts.gate.noise_enabled = true;
  opts.router_std = 0.5;
  MoECheckpoint moe = upcycle_full(dense, opts);
  // Break the expert symmetry and give W_noise a non-trivial value.
  std::uint64_t stream = 60;
  for (auto& [name, t] : moe.tensors) {
    if (name.find(".experts.") != std::string::npos || name.find("w_noise") != std::string::npos) {
      const Tensor delta = testing::random_tensor(t.shape(), stream++, 0.1);
      for (std::size_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] += delta.data()[i];
    }
  }
  std::vector<NamedParam> params;
  std::size_t routers = 0, noise = 0, experts = 0, other = 0;
  for (auto& [name, t] : moe.tensors) {
    t.set_requires_grad(true);
    params.push_back({name, t});
    if (name.find("w_gate") != std::string::npos) ++routers;
    else if (name.find("w_noise") != std::string::npos) ++noise;
    else if (name.find(".experts.") != std::string::npos) ++experts;
    else ++other;
  }
  const Batch batch{testing::random_tokens(8, c.vocab, 53), 2, 4};
  const std::vector<int> targets = testing::random_tokens(8, c.vocab, 54);
  ForwardOptions fo;
  fo.training = true;
  fo.noise_seed = 55;  // same draws on every evaluation: frozen noise
  const GradCheckReport r = grad_check(
      [&] { return cross_entropy(forward(moe, batch, fo).logits, targets); }, params, 1e-5, 1e-4);
  o.require(r.pass, "gradient mismatch");
  o.require(routers > 0 && noise > 0 && experts > 0 && other > 0, "coverage");
  o.detail << params.size() << " tensors (" << routers << " W_g, " << noise << " W_noise, " << experts
           << " expert, " << other << " dense), h = 1e-5, max rel err " << sci(r.max_rel_error)
           << " (<= 1e-4)";
}

MoESpec all_layers(const ModelConfig& c, std::size_t n, std::size_t k) {
  MoESpec spec;
  spec.gate.num_experts = n;
  spec.gate.top_k = k;
  for (std::size_t l = 0; l < c.layers; ++l) spec.layers.push_back(l);
  return spec;
}

void counting_oracles(Outcome& o) {
  Rng rng(61, 0);
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig c;
    c.kv_heads = 1 + rng.below(2);
    c.heads = c.kv_heads * (1 + rng.below(3));
    c.hidden = c.heads * (1 + rng.below(4));
    c.vocab = 3 + rng.below(20);
    c.layers = 1 + rng.below(4);
    c.ffn_hidden = 1 + rng.below(12);
    const DenseCheckpoint dense = init_dense(c, trial);
    o.require(count_params(c, std::nullopt).total == dense.param_count(), "dense count");
    UpcycleOptions up = options(2 + rng.below(6), 1, trial);
    up.gate.top_k = 1 + rng.below(up.gate.num_experts);
    std::vector<std::size_t> layers;
    for (std::size_t l = 0; l < c.layers; ++l)
      if (rng.below(2)) layers.push_back(l);
    up.moe_layers = layers;
    const MoECheckpoint moe = upcycle_full(dense, up);
    std::size_t enumerated = 0, active = 0;
    for (const auto& [name, t] : moe.tensors) {
      enumerated += t.numel();
      const auto pos = name.find(".experts.");
      if (pos == std::string::npos || std::stoul(name.substr(pos + 9)) < up.gate.top_k) active += t.numel();
    }
    const ParamCount p = count_params(c, moe.moe);
    o.require(p.total == enumerated && p.active == active, "moe count");
  }

  const ModelConfig toy;
  const DenseCheckpoint dense = init_dense(toy, 3);
  const MoECheckpoint moe = upcycle_full(dense, UpcycleOptions{});
  const auto tokens = testing::random_tokens(128, toy.vocab, 4);
  double worst_flops = 0.0;
  for (const Checkpoint* ck : {static_cast<const Checkpoint*>(&dense), static_cast<const Checkpoint*>(&moe)}) {
    reset_mac_count();
    forward_logits(*ck, tokens);
    const double counted = 2.0 * static_cast<double>(mac_count());
    const double formula = forward_flops(toy, ck->moe, 128, FlopConvention::k2P, true).total;
    worst_flops = std::max(worst_flops, std::abs(formula / counted - 1.0));
  }
  o.require(worst_flops <= 0.05, "flops vs mac counter");

  const ModelConfig llama = llama3_8b_config();
  const MoESpec spec = all_layers(llama, 8, 2);
  const double dense_params = static_cast<double>(count_params(llama, std::nullopt).total);
  const ParamCount moe_params = count_params(llama, spec);
  const double f_dense = forward_flops(llama, std::nullopt, llama.seq_len, FlopConvention::k6P, true).total;
  const double f_moe = forward_flops(llama, spec, llama.seq_len, FlopConvention::k6P, true).total;
  o.require(std::abs(dense_params / 8.0e9 - 1.0) <= 0.01, "llama3 dense params");
  o.require(std::abs(f_moe / f_dense - 1.6) <= 0.15, "llama3 flops ratio");
  o.detail << "10 random configs exact; flops vs MAC counter within " << sci(100 * worst_flops)
           << "%; llama3-8b dense " << sci(dense_params) << " params, MoE/dense FLOPs "
           << sci(f_moe / f_dense) << " (1.6 +- 0.15). Not asserted: reported 34.4e9 total / 11.8e9 "
           << "active, counted " << sci(static_cast<double>(moe_params.total)) << " / "
           << sci(static_cast<double>(moe_params.active)) << " with every FFN upcycled to 8 experts, top-2";
}

std::vector<std::size_t> divisors(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

ParallelPlan make_plan(std::size_t world, AttentionDims a, MoEDims m, std::size_t node) {
  ParallelPlan p;
  p.world = world;
  p.node_size = node;
  p.attention = a;
  p.moe = m;
  return p;
}

bool within_one_node(const std::vector<std::size_t>& group, std::size_t node) {
  return std::all_of(group.begin(), group.end(), [&](std::size_t r) { return r / node == group[0] / node; });
}

void folding_planner(Outcome& o) {
  const ParallelPlan folded = make_plan(8, {2, 2, 2, 1}, {1, 8, 1, 1}, 8);
  GateConfig gate;
  validate_plan(folded, llama3_8b_config(), &gate);
  const GroupMap g = build_groups(folded);
  const std::vector<std::size_t> node0{0, 1, 2, 3, 4, 5, 6, 7};
  o.require(g.of(GroupKind::kEp).size() == 1 && g.of(GroupKind::kEp)[0] == node0, "ep group is the node");
  for (GroupKind k : {GroupKind::kTp, GroupKind::kCp}) {
    for (const auto& grp : g.of(k)) {
      o.require(within_one_node(grp, 8), "tp/cp nested in node");
      o.require(std::includes(node0.begin(), node0.end(), grp.begin(), grp.end()), "tp/cp inside ep");
    }
  }

  Rng rng(71, 0);
  const std::size_t worlds[] = {1, 2, 4, 6, 8, 12, 16, 24, 32, 64};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t world = worlds[rng.below(std::size(worlds))];
    auto pick = [&](std::size_t n) {
      const auto d = divisors(n);
      return d[rng.below(d.size())];
    };
    const std::size_t pp = pick(world), rest = world / pp;
    const std::size_t tp = pick(rest), cp = pick(rest / tp), dp = rest / tp / cp;
    const std::size_t etp = pick(rest), ep = pick(rest / etp), edp = rest / etp / ep;
    const ParallelPlan p = make_plan(world, {tp, cp, dp, pp}, {etp, ep, edp, pp}, 1 + rng.below(8));
    const GroupMap a = build_groups(p), b = build_groups(p);
    const std::array<std::size_t, kNumGroupKinds> sizes{tp, cp, dp, pp, etp, ep, edp};
    for (GroupKind k : kAllGroupKinds) {
      const std::size_t ki = static_cast<std::size_t>(k);
      std::vector<int> seen(world, 0);
      for (const auto& grp : a.of(k)) {
        o.require(grp.size() == sizes[ki], "group size " + to_string(k));
        for (std::size_t r : grp) ++seen[r];
      }
      o.require(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }), "partition " + to_string(k));
      o.require(a.groups[ki] == b.groups[ki], "determinism");
    }
  }
  const double b1 = pipeline_bubble(4, 1, 4), b2 = pipeline_bubble(4, 8, 4);
  o.require(b1 == 3.0 / 7.0, "bubble(4,1,4)");
  o.require(b2 == 3.0 / 35.0, "bubble(4,8,4)");
  o.detail << "folded layout (attention TP2 CP2 DP2, MoE EP8, world 8) valid, EP group = node {0..7} with TP and CP inside; 200 random plans "
           << "partition and rebuild identically; bubble(4,1,4) = " << b1 << ", bubble(4,8,4) = " << b2;
}

void schedule(Outcome& o) {
  const Schedule s{3e-5, 3e-7, 100, 1000};
  const double pi = std::acos(-1.0);
  const double mid = s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(pi * 0.5));
  const double mid_err = std::abs(lr_at(550, s) - mid);
  const double step = s.lr_max / 100.0;
  const double left = std::abs(lr_at(100, s) - lr_at(99, s)), right = std::abs(lr_at(101, s) - lr_at(100, s));
  o.require(lr_at(100, s) == 3e-5, "lr_at(100)");
  o.require(lr_at(1000, s) == 3e-7, "lr_at(total)");
  o.require(mid_err <= 1e-12, "midpoint");
  o.require(left <= step * (1 + 1e-12) && right <= step, "continuity");
  o.detail << "lr_at(100) = " << sci(lr_at(100, s)) << ", lr_at(1000) = " << sci(lr_at(1000, s))
           << " exactly; midpoint err " << sci(mid_err) << "; jumps at warmup " << sci(left) << " / "
           << sci(right) << " (<= one warmup increment " << sci(step) << ")";
}

void blend(Outcome& o) {
  BlendSpec spec;
  spec.seed = 91;
  BlendSampler a(spec), b(spec);
  std::size_t first = 0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = a.next();
    o.require(x == b.next(), "determinism");
    first += x == 0;
  }
  const double freq = static_cast<double>(first) / n;
  o.require(std::abs(freq - 0.7) <= 0.01, "frequency");
  o.detail << "7:3 blend frequency " << freq << " over 1e5 draws; two samplers with one seed agree";
}

void ablation_shape(Outcome& o) {
  ModelConfig c;
  c.vocab = 32;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.kv_heads = 1;
  c.ffn_hidden = 32;
  c.seq_len = 32;
  AblationSpec spec;
  spec.values = {{std::nullopt, RouterType::kMixtral}, {std::nullopt, RouterType::kSt}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig pre;
    pre.batch_sequences = 8;
    pre.blend.seed = seed;
    pre.schedule = {3e-3, 3e-5, 20, 100};
    DenseCheckpoint dense = init_dense(c, seed, 0.1);
    train(dense, pre, "dense");

    TrainConfig t = pre;
    t.dataset_sequences = 100 * t.batch_sequences;  // one epoch per averaging window
    t.schedule = {3e-4, 3e-6, 100, 2000};
    const auto runs = ablate(dense, options(4, 2, seed), t, spec);
    const double m0 = runs[0].steps[0].loss, s0 = runs[1].steps[0].loss;
    o.require(m0 < s0, "step-0 order, seed " + std::to_string(seed));
    o.detail << "seed " << seed << ": step0 " << sci(m0) << " < " << sci(s0);
    for (const RunMetrics& run : runs) {
      const auto w = window_means(run.losses(), 100);
      bool decreasing = w.size() == 20;
      for (std::size_t i = 1; i < w.size(); ++i) decreasing = decreasing && w[i] < w[i - 1];
      o.require(decreasing, run.run_id + " windows, seed " + std::to_string(seed));
      o.detail << ", " << run.run_id << " windows " << sci(w.front()) << " -> " << sci(w.back())
               << (decreasing ? " decreasing" : " NOT decreasing");
    }
    o.detail << "; ";
  }
}

struct Criterion {
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace
}  // namespace moeup

int main() {
  using namespace moeup;
  const std::vector<Criterion> criteria{
      {"initialization equivalence", initialization_equivalence},
      {"online upcycling", online_upcycling},
      {"gating math", gating_math},
      {"capacity semantics", capacity_semantics},
      {"differentiability", differentiability},
      {"counting oracles", counting_oracles},
      {"folding planner", folding_planner},
      {"schedule", schedule},
      {"blend", blend},
      {"ablation shape", ablation_shape},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2zu %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

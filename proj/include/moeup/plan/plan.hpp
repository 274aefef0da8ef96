// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_PLAN_PLAN_HPP_
#define MOEUP_PLAN_PLAN_HPP_

#include <array>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "moeup/config/json_io.hpp"
#include "moeup/model/checkpoint.hpp"
#include "moeup/model/config.hpp"
#include "moeup/moe/gating.hpp"

namespace moeup {

enum class Dispatcher { kAllToAll, kAllGather };

std::string to_string(Dispatcher d);
Dispatcher parse_dispatcher(const std::string& text);

struct AttentionDims {
  std::size_t tp = 1;
  std::size_t cp = 1;
  std::size_t dp = 1;
  std::size_t pp = 1;
};

struct MoEDims {
  std::size_t etp = 1;
  std::size_t ep = 1;
  std::size_t edp = 1;
  std::size_t pp = 1;
};

struct ParallelPlan {
  std::size_t world = 1;
  std::size_t node_size = 8;
  AttentionDims attention;
  MoEDims moe;
  std::size_t vp = 1;
  std::size_t microbatches = 1;
  Dispatcher dispatcher = Dispatcher::kAllToAll;
};

Json to_json(const ParallelPlan& plan);
ParallelPlan parallel_plan_from_json(const Json& j, ParallelPlan defaults = {});

// Throws kConfig listing every violated constraint, with both sides of
// each. The expert-count check is skipped when gate is null.
void validate_plan(const ParallelPlan& plan, const ModelConfig& model,
                   const GateConfig* gate);

enum class GroupKind : std::size_t { kTp, kCp, kDp, kPp, kEtp, kEp, kEdp };
inline constexpr std::size_t kNumGroupKinds = 7;
inline constexpr std::array<GroupKind, kNumGroupKinds> kAllGroupKinds{
    GroupKind::kTp, GroupKind::kCp,  GroupKind::kDp, GroupKind::kPp,
    GroupKind::kEtp, GroupKind::kEp, GroupKind::kEdp};

std::string to_string(GroupKind kind);
GroupKind parse_group_kind(const std::string& text);

// Ranks are laid out tp fastest, then cp, dp, pp on the attention side and
// etp, ep, edp, pp on the MoE side.
struct GroupMap {
  std::size_t world = 0;
  std::array<std::vector<std::vector<std::size_t>>, kNumGroupKinds> groups;
  std::array<std::vector<std::size_t>, kNumGroupKinds> group_of;  // rank -> index

  const std::vector<std::vector<std::size_t>>& of(GroupKind kind) const {
    return groups[static_cast<std::size_t>(kind)];
  }
  const std::vector<std::size_t>& group(GroupKind kind, std::size_t rank) const {
    return of(kind)[group_of[static_cast<std::size_t>(kind)][rank]];
  }
};

GroupMap build_groups(const ParallelPlan& plan);

// A kind is intra-node iff each of its groups sits inside one node.
std::array<bool, kNumGroupKinds> intra_node_report(const GroupMap& groups,
                                                   std::size_t node_size);

struct ParamCount {
  std::size_t total = 0;
  std::size_t active = 0;
  std::size_t embedding = 0;  // input embedding table
  std::size_t expert = 0;     // parameters held in MoE experts
  std::size_t router = 0;
};

// Closed form. Routers are counted only when N > 1; with N = 1 the MoE block
// is the dense FFN itself.
ParamCount count_params(const ModelConfig& model, const std::optional<MoESpec>& moe);

enum class FlopConvention { k2P, k6P };

std::string to_string(FlopConvention c);
FlopConvention parse_flop_convention(const std::string& text);

struct FlopReport {
  double matmul = 0.0;     // multiplier * counted params * tokens
  double attention = 0.0;  // multiplier * 2 * layers * hidden * tokens^2
  double total = 0.0;
  std::string formula;
};

// The input embedding is a lookup with no multiply-accumulates, so it is
// left out of the counted params unless include_embedding is set.
FlopReport forward_flops(const ModelConfig& model, const std::optional<MoESpec>& moe,
                         std::size_t tokens, FlopConvention convention,
                         bool include_attention_quadratic, bool include_embedding = false);

struct CommVolume {
  double attention_tp = 0.0;  // bytes per layer per rank
  double cp_kv = 0.0;
  double alltoall = 0.0;
  double allgather = 0.0;
  double moe_dispatch = 0.0;  // the one selected by the plan's dispatcher
};

CommVolume comm_volume(const ParallelPlan& plan, const ModelConfig& model,
                       const GateConfig& gate, std::size_t tokens_per_rank,
                       double bytes_per_elem = 2.0);

double pipeline_bubble(std::size_t pp, std::size_t vp, std::size_t microbatches);

struct MemoryEstimate {
  double dense_params_local = 0.0;
  double expert_params_local = 0.0;
  double weights_and_grads = 0.0;  // bytes
  double optimizer = 0.0;          // bytes
  double total = 0.0;              // bytes
};

MemoryEstimate memory_estimate(const ParallelPlan& plan, const ModelConfig& model,
                               const std::optional<MoESpec>& moe,
                               double bytes_per_param = 2.0,
                               double optimizer_multiplier = 12.0);

struct CostOptions {
  std::size_t tokens_per_rank = 4096;
  double bytes_per_param = 2.0;
  double optimizer_multiplier = 12.0;
  FlopConvention convention = FlopConvention::k2P;
  bool include_attention_quadratic = true;
  bool include_embedding = false;
};

struct CostReport {
  std::array<bool, kNumGroupKinds> intra_node{};
  CommVolume comm;
  ParamCount params;
  FlopReport flops;
  double bubble = 0.0;
  MemoryEstimate memory;
};

struct PlanInputs {
  ParallelPlan plan;
  ModelConfig model;
  GateConfig gate;
  std::optional<std::vector<std::size_t>> moe_layers;  // null = all layers
  CostOptions cost;

  MoESpec moe_spec() const;
};

Json to_json(const PlanInputs& inputs);
PlanInputs plan_inputs_from_json(const Json& j);

CostReport plan_report(const PlanInputs& inputs, const GroupMap& groups);

struct MetricRecord {
  std::string metric;
  Json value;
};

std::vector<MetricRecord> report_records(const PlanInputs& inputs, const GroupMap& groups,
                                         const CostReport& report);
void write_report_table(std::ostream& os, const PlanInputs& inputs, const GroupMap& groups,
                        const CostReport& report);

}  // namespace moeup

#endif  // MOEUP_PLAN_PLAN_HPP_

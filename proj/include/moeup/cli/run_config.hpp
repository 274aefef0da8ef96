// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_CLI_RUN_CONFIG_HPP_
#define MOEUP_CLI_RUN_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moeup/config/json_io.hpp"
#include "moeup/model/config.hpp"
#include "moeup/moe/gating.hpp"
#include "moeup/plan/plan.hpp"
#include "moeup/train/train.hpp"
#include "moeup/upcycle/upcycle.hpp"

namespace moeup {

struct UpcycleSection {
  std::string input;
  std::string output;
  double router_std = 0.02;
  // tp * ep > 1 upcycles shard by shard and gathers the result.
  std::size_t tp = 1;
  std::size_t ep = 1;
  std::string shard_dir;  // keep the upcycled shards here when set
};

struct TrainSection {
  TrainConfig config;
  std::string input;  // empty: fresh dense model from `model` and `seed`
  double init_std = 0.02;
  std::string output;
};

struct EvalSection {
  std::string input;
  std::size_t sequences = 64;
  std::size_t seq_len = 0;  // 0 = model seq_len
};

struct AblateSection {
  std::string input;  // dense checkpoint; empty: fresh dense model
  AblationSpec spec;
  // Dense training before the sweep, with the train section's settings.
  std::size_t pretrain_steps = 0;
};

struct FlopsSection {
  std::string preset = "llama3-8b";  // or "model" for the model section
  std::size_t tokens = 8192;
  FlopConvention convention = FlopConvention::k6P;
  bool include_attention_quadratic = true;
  bool include_embedding = false;
};

// Everything a command may need. Every RNG derives from `seed`; the
// train.blend.seed and train.noise_seed keys are offsets added to it.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  GateConfig gate;
  std::optional<std::vector<std::size_t>> moe_layers;
  ParallelPlan parallel;
  CostOptions cost;
  UpcycleSection upcycle;
  TrainSection train;
  EvalSection eval;
  AblateSection ablate;
  FlopsSection flops;

  UpcycleOptions upcycle_options() const;
  PlanInputs plan_inputs() const;
  TrainConfig train_config() const;
  ModelConfig flops_model() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

// Merges `overrides` into `base` key by key (objects recursively).
Json merge_config(Json base, const Json& overrides);

// "key.path = default" for every accepted key, one per line.
std::string run_config_keys();

}  // namespace moeup

#endif  // MOEUP_CLI_RUN_CONFIG_HPP_

// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_TRAIN_TRAIN_HPP_
#define MOEUP_TRAIN_TRAIN_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "moeup/config/json_io.hpp"
#include "moeup/core/rng.hpp"
#include "moeup/core/tensor.hpp"
#include "moeup/model/checkpoint.hpp"
#include "moeup/model/transformer.hpp"
#include "moeup/upcycle/upcycle.hpp"

namespace moeup {

struct Schedule {
  double lr_max = 3e-5;
  double lr_min = 3e-7;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 1000;

  void validate() const;
};

// Linear warmup from 0 to lr_max, then cosine annealing down to lr_min.
// Defined on 0 <= step <= total_steps; anything else is kInput.
double lr_at(std::size_t step, const Schedule& s);

Json to_json(const Schedule& s);
Schedule schedule_from_json(const Json& j, Schedule defaults = {});

struct BlendSource {
  std::string corpus;
  double weight = 1.0;
};

struct BlendSpec {
  std::vector<BlendSource> sources{{"markov-a", 7.0}, {"markov-b", 3.0}};
  std::uint64_t seed = 0;

  void validate() const;
};

Json to_json(const BlendSpec& b);
BlendSpec blend_spec_from_json(const Json& j, BlendSpec defaults = {});

// i.i.d. categorical draws of source indices. Draw i depends only on
// (seed, i), so streams are reproducible and can be indexed directly.
class BlendSampler {
 public:
  explicit BlendSampler(const BlendSpec& spec);

  std::size_t at(std::uint64_t i) const;
  std::size_t next() { return at(position_++); }
  std::size_t num_sources() const { return cumulative_.size(); }

 private:
  Rng rng_;
  std::vector<double> cumulative_;  // normalised, last entry exactly 1
  std::uint64_t position_ = 0;
};

// Seeded first-order Markov chain over the vocabulary. Every token has
// `branching` randomly chosen, equally likely successors, so every state has
// the same conditional entropy ln(branching).
class MarkovCorpus {
 public:
  MarkovCorpus(std::size_t vocab, std::uint64_t seed, std::size_t branching = 4);

  std::size_t vocab() const { return vocab_; }
  // Sequence drawn from the Philox stream (seed of the corpus, stream).
  std::vector<int> sample(std::size_t length, std::uint64_t stream) const;
  // Entropy rate in nats under the chain's stationary distribution.
  double entropy_rate() const;

 private:
  std::size_t vocab_;
  std::uint64_t seed_;
  std::vector<std::vector<int>> next_;
  std::vector<std::vector<double>> cumulative_;
};

// Language-modelling batch: inputs and next-token targets of equal size.
struct LmBatch {
  Batch inputs;
  std::vector<int> targets;
  std::vector<std::size_t> sources;  // per sequence
};

// Blend of Markov corpora. Corpus ids are mapped to chains by hashing the
// id with the blend seed, so the same id always yields the same chain.
class SyntheticData {
 public:
  SyntheticData(const BlendSpec& blend, std::size_t vocab, std::size_t branching = 4);

  // Batch for a given step. Depends only on the blend and `step`. With
  // dataset > 0 the stream is a fixed set of that many sequences, cycled in
  // order.
  LmBatch batch(std::uint64_t step, std::size_t sequences, std::size_t seq_len,
                std::size_t dataset = 0) const;
  // Held-out sequences of seq_len + 1 tokens, disjoint streams from training.
  std::vector<std::vector<int>> eval_sequences(std::size_t count, std::size_t seq_len) const;

  const MarkovCorpus& corpus(std::size_t i) const { return corpora_[i]; }

 private:
  BlendSpec blend_;
  BlendSampler sampler_;
  std::vector<MarkovCorpus> corpora_;
};

enum class OptimizerKind { kAdam, kSgdMomentum };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
};

Json to_json(const OptimizerConfig& o);
OptimizerConfig optimizer_config_from_json(const Json& j, OptimizerConfig defaults = {});

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Tensor> params);

  // Applies one update with the gradients currently stored on the params.
  void step(double lr);
  void zero_grad();
  // Global L2 norm of the current gradients.
  double grad_norm() const;
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  Schedule schedule;
  OptimizerConfig optimizer;
  BlendSpec blend;
  std::size_t batch_sequences = 32;
  std::size_t seq_len = 0;  // 0 = model seq_len
  std::size_t markov_branching = 4;
  std::size_t dataset_sequences = 0;  // 0 = endless stream
  std::uint64_t noise_seed = 0;
};

Json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const Json& j, TrainConfig defaults = {});

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  // Means over MoE layers (0 for a dense model).
  double drop_rate = 0.0;
  double load_entropy = 0.0;
  std::vector<double> layer_drop_rate;
  std::vector<double> layer_load_entropy;
};

struct RunMetrics {
  std::string run_id;
  std::vector<StepMetrics> steps;

  std::vector<double> losses() const;
};

using StepCallback = std::function<void(const StepMetrics&)>;

// Trains every tensor of `model` in place, routers included. Step s uses
// lr_at(s) and the data batch for step s; the loss logged for step s is the
// one computed before its update. A non-finite loss throws kNumeric naming
// the last good step.
RunMetrics train(Checkpoint& model, const TrainConfig& cfg, const std::string& run_id,
                 const StepCallback& on_step = {});

// exp(mean next-token NLL) over the given sequences; evaluation mode.
double eval_perplexity(const Checkpoint& model, std::span<const std::vector<int>> sequences);

inline constexpr const char* kMetricsCsvHeader = "step,run_id,loss,lr,drop_rate,load_entropy";
void write_metrics_csv(std::ostream& os, const RunMetrics& run, bool header = true);

enum class AblationAxis { kCapacityFactor, kRouterType };

std::string to_string(AblationAxis a);
AblationAxis parse_ablation_axis(const std::string& text);

// One value of the swept axis. Capacity factors use std::nullopt for
// dropless.
struct AblationValue {
  std::optional<double> capacity_factor;
  RouterType router_type = RouterType::kMixtral;
};

struct AblationSpec {
  AblationAxis axis = AblationAxis::kRouterType;
  std::vector<AblationValue> values;
};

// "cf1", "cf2.5", "dropless", "mixtral", "st".
std::string run_id(const AblationSpec& spec, const AblationValue& v);

// Upcycles `dense` once per value and trains each copy with the same data
// and seeds.
std::vector<RunMetrics> ablate(const DenseCheckpoint& dense, const UpcycleOptions& base,
                               const TrainConfig& cfg, const AblationSpec& spec,
                               const StepCallback& on_step = {});

// Mean of each consecutive window of `window` values; a trailing partial
// window is ignored.
std::vector<double> window_means(std::span<const double> values, std::size_t window);

}  // namespace moeup

#endif  // MOEUP_TRAIN_TRAIN_HPP_

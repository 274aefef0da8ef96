// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_MODEL_CHECKPOINT_HPP_
#define MOEUP_MODEL_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moeup/core/tensor.hpp"
#include "moeup/model/config.hpp"
#include "moeup/moe/gating.hpp"

namespace moeup {

enum class DType { kF32, kF64 };

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

// MoE metadata carried by an upcycled checkpoint.
struct MoESpec {
  GateConfig gate;
  std::vector<std::size_t> layers;  // ascending, which FFNs are MoE

  bool contains(std::size_t layer) const;
};

// Named tensor bundle plus the geometry needed to interpret it. A checkpoint
// without `moe` is dense. Tensors are stored in 64-bit; `dtype` is the
// on-disk precision.
struct Checkpoint {
  ModelConfig config;
  std::optional<MoESpec> moe;
  DType dtype = DType::kF64;
  std::map<std::string, Tensor> tensors;

  bool is_moe() const { return moe.has_value(); }
  bool is_moe_layer(std::size_t layer) const { return moe && moe->contains(layer); }

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  // Deep copy; tensors of the copy share nothing with this one.
  Checkpoint clone() const;
  std::size_t param_count() const;
};

using DenseCheckpoint = Checkpoint;
using MoECheckpoint = Checkpoint;

namespace names {
std::string layer(std::size_t i);
std::string ffn(std::size_t layer, const char* which);  // w1 | w2 | w3
std::string router(std::size_t layer, const char* which);  // w_gate | w_noise
std::string expert(std::size_t layer, std::size_t expert, const char* which);
inline constexpr const char* kEmbedding = "tok_embeddings";
inline constexpr const char* kFinalNorm = "norm";
inline constexpr const char* kOutput = "output";
}  // namespace names

// The exact tensor set a checkpoint of this geometry must hold.
std::vector<std::pair<std::string, Shape>> expected_schema(
    const ModelConfig& config, const std::optional<MoESpec>& moe);

// Throws kSchema when the tensor set differs from expected_schema or any
// value is non-finite.
void validate_checkpoint(const Checkpoint& ckpt);

// Weights ~ N(0, init_std^2), norms = 1. Tensor i of the schema draws from
// stream i of `seed`.
DenseCheckpoint init_dense(const ModelConfig& config, std::uint64_t seed,
                           double init_std = 0.02);

std::uint32_t crc32c(std::span<const std::uint8_t> bytes,
                     std::uint32_t crc = 0);

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

// Directory layout: manifest.json + weights.bin. Records appear in name
// order; every payload starts at a 64-byte aligned offset with zero padding
// in between. With check_schema=false the tensor set is not compared
// against the config (used for shard payloads).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir,
                     bool check_schema = true);
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           bool check_schema = true);

}  // namespace moeup

#endif  // MOEUP_MODEL_CHECKPOINT_HPP_

// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_MODEL_CONFIG_HPP_
#define MOEUP_MODEL_CONFIG_HPP_

#include <cstddef>
#include <string>

#include "moeup/config/json_io.hpp"

namespace moeup {

enum class Positional { kNone, kRotary };

// Llama-style decoder geometry. Defaults are the toy model used throughout
// the tests.
struct ModelConfig {
  std::size_t vocab = 512;
  std::size_t hidden = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t kv_heads = 2;
  std::size_t ffn_hidden = 256;
  std::size_t seq_len = 128;
  Positional positional = Positional::kNone;
  double norm_eps = 1e-5;
  double rope_theta = 10000.0;

  std::size_t head_dim() const { return hidden / heads; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Llama 3-8B dimensions, for the analytic calculators only.
ModelConfig llama3_8b_config();

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j, ModelConfig defaults = {});

}  // namespace moeup

#endif  // MOEUP_MODEL_CONFIG_HPP_

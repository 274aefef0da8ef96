// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/model/config.hpp"

namespace moeup {

void ModelConfig::validate() const {
  const std::pair<const char*, std::size_t> counts[] = {
      {"vocab", vocab},       {"hidden", hidden},         {"layers", layers},
      {"heads", heads},       {"kv_heads", kv_heads},     {"ffn_hidden", ffn_hidden},
      {"seq_len", seq_len}};
  for (const auto& [name, value] : counts) {
    if (value < 1) fail(ErrorCode::kConfig, std::string("model.") + name + " must be >= 1");
  }
  if (heads % kv_heads != 0) {
    fail(ErrorCode::kConfig, "model.heads (" + std::to_string(heads) +
                                 ") must be divisible by kv_heads (" +
                                 std::to_string(kv_heads) + ")");
  }
  if (hidden % heads != 0) {
    fail(ErrorCode::kConfig, "model.hidden (" + std::to_string(hidden) +
                                 ") must be divisible by heads (" +
                                 std::to_string(heads) + ")");
  }
  if (positional == Positional::kRotary && head_dim() % 2 != 0) {
    fail(ErrorCode::kConfig, "rotary positions need an even head_dim");
  }
  if (!(norm_eps > 0.0)) fail(ErrorCode::kConfig, "model.norm_eps must be > 0");
}

ModelConfig llama3_8b_config() {
  ModelConfig cfg;
  cfg.vocab = 128256;
  cfg.hidden = 4096;
  cfg.layers = 32;
  cfg.heads = 32;
  cfg.kv_heads = 8;
  cfg.ffn_hidden = 14336;
  cfg.seq_len = 8192;
  cfg.positional = Positional::kRotary;
  cfg.rope_theta = 500000.0;
  return cfg;
}

Json to_json(const ModelConfig& cfg) {
  Json j;
  j["vocab"] = cfg.vocab;
  j["hidden"] = cfg.hidden;
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["kv_heads"] = cfg.kv_heads;
  j["ffn_hidden"] = cfg.ffn_hidden;
  j["seq_len"] = cfg.seq_len;
  j["positional"] = cfg.positional == Positional::kRotary ? "rotary" : "none";
  j["norm_eps"] = cfg.norm_eps;
  j["rope_theta"] = cfg.rope_theta;
  return j;
}

ModelConfig model_config_from_json(const Json& j, ModelConfig cfg) {
  JsonSection s(j, "model");
  s.read("vocab", cfg.vocab);
  s.read("hidden", cfg.hidden);
  s.read("layers", cfg.layers);
  s.read("heads", cfg.heads);
  s.read("kv_heads", cfg.kv_heads);
  s.read("ffn_hidden", cfg.ffn_hidden);
  s.read("seq_len", cfg.seq_len);
  std::string positional = cfg.positional == Positional::kRotary ? "rotary" : "none";
  s.read("positional", positional);
  if (positional == "rotary") {
    cfg.positional = Positional::kRotary;
  } else if (positional == "none") {
    cfg.positional = Positional::kNone;
  } else {
    fail(ErrorCode::kConfig, "model.positional must be none|rotary, got '" + positional + "'");
  }
  s.read("norm_eps", cfg.norm_eps);
  s.read("rope_theta", cfg.rope_theta);
  s.finish();
  return cfg;
}

}  // namespace moeup

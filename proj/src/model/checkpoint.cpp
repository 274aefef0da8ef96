// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/model/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "moeup/config/json_io.hpp"
#include "moeup/core/error.hpp"
#include "moeup/core/rng.hpp"

namespace moeup {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::size_t dtype_size(DType dtype) { return dtype == DType::kF32 ? 4 : 8; }
const char* dtype_name(DType dtype) { return dtype == DType::kF32 ? "f32" : "f64"; }

namespace {

DType parse_dtype(const std::string& text) {
  if (text == "f32") return DType::kF32;
  if (text == "f64") return DType::kF64;
  fail(ErrorCode::kSchema, "unknown dtype '" + text + "'");
}

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int b = 0; b < 8; ++b) c = (c & 1u) ? (c >> 1) ^ 0x82F63B78u : c >> 1;
    table[i] = c;
  }
  return table;
}

constexpr auto kCrcTable = make_crc_table();

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype) {
  std::vector<std::uint8_t> bytes(t.numel() * dtype_size(dtype));
  if (dtype == DType::kF64) {
    std::memcpy(bytes.data(), t.data().data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const float f = static_cast<float>(t.data()[i]);
      std::memcpy(bytes.data() + 4 * i, &f, 4);
    }
  }
  return bytes;
}

std::size_t align_up(std::size_t offset) {
  return (offset + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
}

Json moe_to_json(const MoESpec& spec) {
  Json j;
  j["gate"] = to_json(spec.gate);
  j["layers"] = spec.layers;
  return j;
}

MoESpec moe_from_json(const Json& j) {
  MoESpec spec;
  JsonSection s(j, "moe");
  if (const Json* gate = s.raw("gate")) spec.gate = gate_config_from_json(*gate);
  s.read("layers", spec.layers);
  s.finish();
  return spec;
}

}  // namespace

bool MoESpec::contains(std::size_t layer) const {
  return std::binary_search(layers.begin(), layers.end(), layer);
}

const Tensor& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorCode::kSchema, "checkpoint has no tensor '" + name + "'");
  return it->second;
}

Tensor& Checkpoint::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorCode::kSchema, "checkpoint has no tensor '" + name + "'");
  return it->second;
}

Checkpoint Checkpoint::clone() const {
  Checkpoint out;
  out.config = config;
  out.moe = moe;
  out.dtype = dtype;
  for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.clone());
  return out;
}

std::size_t Checkpoint::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

namespace names {
std::string layer(std::size_t i) { return "layers." + std::to_string(i); }
std::string ffn(std::size_t l, const char* which) {
  return layer(l) + ".feed_forward." + which;
}
std::string router(std::size_t l, const char* which) {
  return layer(l) + ".feed_forward.router." + which;
}
std::string expert(std::size_t l, std::size_t e, const char* which) {
  return layer(l) + ".feed_forward.experts." + std::to_string(e) + "." + which;
}
}  // namespace names

std::vector<std::pair<std::string, Shape>> expected_schema(
    const ModelConfig& c, const std::optional<MoESpec>& moe) {
  const std::size_t d = c.hidden, f = c.ffn_hidden;
  const std::size_t kv = c.kv_heads * c.head_dim();
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back(names::kEmbedding, Shape{c.vocab, d});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = names::layer(l);
    out.emplace_back(p + ".attention_norm", Shape{d});
    out.emplace_back(p + ".attention.wq", Shape{d, d});
    out.emplace_back(p + ".attention.wk", Shape{d, kv});
    out.emplace_back(p + ".attention.wv", Shape{d, kv});
    out.emplace_back(p + ".attention.wo", Shape{d, d});
    out.emplace_back(p + ".ffn_norm", Shape{d});
    if (moe && moe->contains(l)) {
      const std::size_t n = moe->gate.num_experts;
      out.emplace_back(names::router(l, "w_gate"), Shape{d, n});
      out.emplace_back(names::router(l, "w_noise"), Shape{d, n});
      for (std::size_t e = 0; e < n; ++e) {
        out.emplace_back(names::expert(l, e, "w1"), Shape{d, f});
        out.emplace_back(names::expert(l, e, "w2"), Shape{f, d});
        out.emplace_back(names::expert(l, e, "w3"), Shape{d, f});
      }
    } else {
      out.emplace_back(names::ffn(l, "w1"), Shape{d, f});
      out.emplace_back(names::ffn(l, "w2"), Shape{f, d});
      out.emplace_back(names::ffn(l, "w3"), Shape{d, f});
    }
  }
  out.emplace_back(names::kFinalNorm, Shape{d});
  out.emplace_back(names::kOutput, Shape{d, c.vocab});
  return out;
}

void validate_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  if (ckpt.moe) {
    ckpt.moe->gate.validate();
    for (std::size_t l : ckpt.moe->layers) {
      if (l >= ckpt.config.layers) {
        fail(ErrorCode::kSchema, "moe layer " + std::to_string(l) + " out of range");
      }
    }
  }
  const auto schema = expected_schema(ckpt.config, ckpt.moe);
  std::set<std::string> expected;
  for (const auto& [name, shape] : schema) {
    expected.insert(name);
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) fail(ErrorCode::kSchema, "missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      fail(ErrorCode::kSchema, "tensor '" + name + "' has shape " +
                                   shape_str(it->second.shape()) + ", expected " +
                                   shape_str(shape));
    }
    for (double v : it->second.data()) {
      if (!std::isfinite(v)) fail(ErrorCode::kSchema, "tensor '" + name + "' is not finite");
    }
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (!expected.count(name)) fail(ErrorCode::kSchema, "unexpected tensor '" + name + "'");
  }
}

DenseCheckpoint init_dense(const ModelConfig& config, std::uint64_t seed,
                           double init_std) {
  config.validate();
  DenseCheckpoint ckpt;
  ckpt.config = config;
  std::uint64_t stream = 0;
  for (const auto& [name, shape] : expected_schema(config, std::nullopt)) {
    Rng rng(seed, stream++);
    std::vector<double> values(shape_numel(shape));
    if (shape.size() == 1) {
      std::fill(values.begin(), values.end(), 1.0);
    } else {
      for (double& v : values) v = init_std * rng.normal();
    }
    ckpt.tensors.emplace(name, Tensor::from(shape, std::move(values)));
  }
  return ckpt;
}

std::uint32_t crc32c(std::span<const std::uint8_t> bytes, std::uint32_t crc) {
  crc = ~crc;
  for (std::uint8_t b : bytes) crc = kCrcTable[(crc ^ b) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir,
                     bool check_schema) {
  if (check_schema) validate_checkpoint(ckpt);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());

  Json records = Json::array();
  std::ofstream weights(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!weights) fail(ErrorCode::kIo, "cannot write " + (dir / "weights.bin").string());
  std::size_t offset = 0;
  static const char kZeros[kPayloadAlignment] = {};
  for (const auto& [name, tensor] : ckpt.tensors) {
    const std::size_t aligned = align_up(offset);
    weights.write(kZeros, static_cast<std::streamsize>(aligned - offset));
    const auto bytes = encode(tensor, ckpt.dtype);
    weights.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    Json rec;
    rec["name"] = name;
    rec["dtype"] = dtype_name(ckpt.dtype);
    rec["shape"] = tensor.shape();
    rec["offset"] = aligned;
    rec["length"] = bytes.size();
    rec["crc32c"] = crc32c(bytes);
    records.push_back(std::move(rec));
    offset = aligned + bytes.size();
  }
  weights.close();
  if (!weights) fail(ErrorCode::kIo, "write failed for " + (dir / "weights.bin").string());

  Json manifest;
  manifest["format"] = "moeup-checkpoint";
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["config"] = to_json(ckpt.config);
  manifest["moe"] = ckpt.moe ? moe_to_json(*ckpt.moe) : Json(nullptr);
  manifest["tensors"] = std::move(records);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed for " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir, bool check_schema) {
  const auto manifest_path = dir / "manifest.json";
  const auto weights_path = dir / "weights.bin";
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + manifest_path.string());
  Json manifest;
  try {
    manifest = Json::parse(in);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kSchema, manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("format_version") ||
      !manifest["format_version"].is_number_integer()) {
    fail(ErrorCode::kSchema, manifest_path.string() + ": no format_version");
  }
  const auto version = manifest["format_version"].get<long long>();
  if (version != kCheckpointFormatVersion) {
    fail(ErrorCode::kVersion, "unsupported checkpoint format_version " +
                                  std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointFormatVersion) + ")");
  }

  std::ifstream wf(weights_path, std::ios::binary);
  if (!wf) fail(ErrorCode::kIo, "cannot open " + weights_path.string());
  const std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(wf)),
                                       std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  try {
    JsonSection top(manifest, "manifest");
    std::string format;
    top.read("format", format);
    if (format != "moeup-checkpoint") fail(ErrorCode::kSchema, "not a moeup checkpoint");
    top.raw("format_version");
    ckpt.config = model_config_from_json(manifest.at("config"));
    top.raw("config");
    if (const Json* moe = top.raw("moe"); moe && !moe->is_null()) {
      ckpt.moe = moe_from_json(*moe);
    }
    const Json* records = top.raw("tensors");
    top.finish();
    if (!records || !records->is_array()) fail(ErrorCode::kSchema, "manifest has no tensor list");

    bool first = true;
    for (const Json& rec : *records) {
      const auto name = rec.at("name").get<std::string>();
      const DType dtype = parse_dtype(rec.at("dtype").get<std::string>());
      const auto shape = rec.at("shape").get<Shape>();
      const auto offset = rec.at("offset").get<std::size_t>();
      const auto length = rec.at("length").get<std::size_t>();
      const auto crc = rec.at("crc32c").get<std::uint32_t>();
      if (first) {
        ckpt.dtype = dtype;
        first = false;
      } else if (dtype != ckpt.dtype) {
        fail(ErrorCode::kSchema, "tensor '" + name + "' mixes dtypes within one checkpoint");
      }
      const std::size_t count = shape_numel(shape);
      if (count * dtype_size(dtype) != length) {
        fail(ErrorCode::kLength, "tensor '" + name + "' declares shape " + shape_str(shape) +
                                     " (" + std::to_string(count) + " values) but its payload holds " +
                                     std::to_string(length / dtype_size(dtype)) + " values");
      }
      if (offset % kPayloadAlignment != 0) {
        fail(ErrorCode::kSchema, "tensor '" + name + "' offset is not 64-byte aligned");
      }
      if (offset > blob.size() || length > blob.size() - offset) {
        fail(ErrorCode::kTruncated, "weights.bin ends before tensor '" + name + "' (needs " +
                                        std::to_string(offset + length) + " bytes, have " +
                                        std::to_string(blob.size()) + ")");
      }
      const std::span<const std::uint8_t> payload(blob.data() + offset, length);
      if (crc32c(payload) != crc) fail(ErrorCode::kChecksum, "checksum mismatch in tensor '" + name + "'");
      std::vector<double> values(count);
      if (dtype == DType::kF64) {
        std::memcpy(values.data(), payload.data(), length);
      } else {
        for (std::size_t i = 0; i < count; ++i) {
          float f;
          std::memcpy(&f, payload.data() + 4 * i, 4);
          values[i] = f;
        }
      }
      if (!ckpt.tensors.emplace(name, Tensor::from(shape, std::move(values))).second) {
        fail(ErrorCode::kSchema, "tensor '" + name + "' listed twice");
      }
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kSchema, manifest_path.string() + ": " + e.what());
  }
  if (check_schema) validate_checkpoint(ckpt);
  return ckpt;
}

}  // namespace moeup

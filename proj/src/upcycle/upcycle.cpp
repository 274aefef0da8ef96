// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/upcycle/upcycle.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <tuple>

#include "moeup/config/json_io.hpp"
#include "moeup/core/error.hpp"
#include "moeup/core/rng.hpp"

namespace moeup {
namespace {

std::vector<std::size_t> resolve_layers(const UpcycleOptions& opts,
                                        const ModelConfig& config) {
  std::vector<std::size_t> layers;
  if (opts.moe_layers) {
    layers = *opts.moe_layers;
  } else {
    for (std::size_t l = 0; l < config.layers; ++l) layers.push_back(l);
  }
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  for (std::size_t l : layers) {
    if (l >= config.layers) {
      fail(ErrorCode::kConfig, "moe layer index " + std::to_string(l) +
                                   " out of range for a " +
                                   std::to_string(config.layers) + "-layer model");
    }
  }
  return layers;
}

void check_options(const UpcycleOptions& opts) {
  opts.gate.validate();
  if (opts.gate.num_experts < 2) {
    fail(ErrorCode::kConfig, "upcycling needs num_experts >= 2, got " +
                                 std::to_string(opts.gate.num_experts));
  }
  if (!(opts.router_std >= 0.0)) fail(ErrorCode::kConfig, "router_std must be >= 0");
}

bool is_ffn_name(const std::string& name, std::size_t layer, const char* which) {
  return name == names::ffn(layer, which);
}

// Column block [c0, c0 + width) of a rows x cols tensor.
Tensor column_block(const Tensor& t, std::size_t c0, std::size_t width) {
  const std::size_t rows = t.rows(), cols = t.cols();
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(t.data().begin() + r * cols + c0, width, out.begin() + r * width);
  }
  return Tensor::from({rows, width}, std::move(out));
}

Tensor row_block(const Tensor& t, std::size_t r0, std::size_t height) {
  const std::size_t cols = t.cols();
  std::vector<double> out(t.data().begin() + r0 * cols,
                          t.data().begin() + (r0 + height) * cols);
  return Tensor::from({height, cols}, std::move(out));
}

Tile whole(const Tensor& t) { return {t.shape(), 0, 0}; }

}  // namespace

Tensor init_router_weights(const UpcycleOptions& opts, std::size_t layer,
                           std::size_t hidden) {
  Rng rng(opts.router_seed, layer);
  std::vector<double> values(hidden * opts.gate.num_experts);
  for (double& v : values) v = opts.router_std * rng.normal();
  return Tensor::from({hidden, opts.gate.num_experts}, std::move(values));
}

MoECheckpoint upcycle_full(const DenseCheckpoint& dense, const UpcycleOptions& opts) {
  check_options(opts);
  if (dense.is_moe()) fail(ErrorCode::kConfig, "upcycle_full expects a dense checkpoint");
  validate_checkpoint(dense);
  const auto layers = resolve_layers(opts, dense.config);

  MoECheckpoint out;
  out.config = dense.config;
  out.dtype = dense.dtype;
  out.moe = MoESpec{opts.gate, layers};
  const std::size_t d = dense.config.hidden, n = opts.gate.num_experts;
  for (const auto& [name, tensor] : dense.tensors) {
    bool converted = false;
    for (std::size_t l : layers) {
      for (const char* w : {"w1", "w2", "w3"}) {
        if (!is_ffn_name(name, l, w)) continue;
        for (std::size_t e = 0; e < n; ++e) {
          out.tensors.emplace(names::expert(l, e, w), tensor.clone());
        }
        converted = true;
      }
    }
    if (!converted) out.tensors.emplace(name, tensor.clone());
  }
  for (std::size_t l : layers) {
    out.tensors.emplace(names::router(l, "w_gate"), init_router_weights(opts, l, d));
    out.tensors.emplace(names::router(l, "w_noise"), Tensor::zeros({d, n}));
  }
  validate_checkpoint(out);
  return out;
}

std::vector<Shard> shard_dense(const DenseCheckpoint& dense, std::size_t tp,
                               std::size_t ep) {
  if (dense.is_moe()) fail(ErrorCode::kConfig, "shard_dense expects a dense checkpoint");
  if (tp < 1 || ep < 1) fail(ErrorCode::kConfig, "tp and ep must be >= 1");
  validate_checkpoint(dense);
  const std::size_t f = dense.config.ffn_hidden;
  for (std::size_t l = 0; l < dense.config.layers; ++l) {
    if (f % tp != 0) {
      fail(ErrorCode::kConfig, "tensor '" + names::ffn(l, "w1") + "': ffn_hidden " +
                                   std::to_string(f) + " is not divisible by tp " +
                                   std::to_string(tp));
    }
  }
  const std::size_t width = f / tp;
  std::vector<Shard> shards;
  for (std::size_t ei = 0; ei < ep; ++ei) {
    for (std::size_t ti = 0; ti < tp; ++ti) {
      Shard shard;
      shard.spec = {ei * tp + ti, ti, tp, ei, ep};
      shard.payload.config = dense.config;
      shard.payload.dtype = dense.dtype;
      for (const auto& [name, tensor] : dense.tensors) {
        bool tiled = false;
        for (std::size_t l = 0; l < dense.config.layers && !tiled; ++l) {
          if (is_ffn_name(name, l, "w1") || is_ffn_name(name, l, "w3")) {
            shard.payload.tensors.emplace(name, column_block(tensor, ti * width, width));
            shard.tiles[name] = {tensor.shape(), 0, ti * width};
            tiled = true;
          } else if (is_ffn_name(name, l, "w2")) {
            shard.payload.tensors.emplace(name, row_block(tensor, ti * width, width));
            shard.tiles[name] = {tensor.shape(), ti * width, 0};
            tiled = true;
          }
        }
        if (!tiled) {
          shard.payload.tensors.emplace(name, tensor.clone());
          shard.tiles[name] = whole(tensor);
        }
      }
      shards.push_back(std::move(shard));
    }
  }
  return shards;
}

Shard upcycle_shard(const Shard& shard, const UpcycleOptions& opts) {
  check_options(opts);
  const ModelConfig& config = shard.payload.config;
  const auto layers = resolve_layers(opts, config);
  const std::size_t n = opts.gate.num_experts, ep = shard.spec.ep_size;
  if (n % ep != 0) {
    fail(ErrorCode::kConfig, "num_experts " + std::to_string(n) +
                                 " is not divisible by ep " + std::to_string(ep));
  }
  const std::size_t per_rank = n / ep;
  const std::size_t first = shard.spec.ep_index * per_rank;
  const std::size_t d = config.hidden;

  Shard out;
  out.spec = shard.spec;
  out.payload.config = config;
  out.payload.dtype = shard.payload.dtype;
  out.payload.moe = MoESpec{opts.gate, layers};
  for (const auto& [name, tensor] : shard.payload.tensors) {
    const Tile& tile = shard.tiles.at(name);
    bool converted = false;
    for (std::size_t l : layers) {
      for (const char* w : {"w1", "w2", "w3"}) {
        if (!is_ffn_name(name, l, w)) continue;
        for (std::size_t e = first; e < first + per_rank; ++e) {
          const std::string expert = names::expert(l, e, w);
          out.payload.tensors.emplace(expert, tensor.clone());
          out.tiles[expert] = tile;
        }
        converted = true;
      }
    }
    if (!converted) {
      out.payload.tensors.emplace(name, tensor.clone());
      out.tiles[name] = tile;
    }
  }
  for (std::size_t l : layers) {
    const std::string wg = names::router(l, "w_gate");
    const std::string wn = names::router(l, "w_noise");
    out.payload.tensors.emplace(wg, init_router_weights(opts, l, d));
    out.payload.tensors.emplace(wn, Tensor::zeros({d, n}));
    out.tiles[wg] = {Shape{d, n}, 0, 0};
    out.tiles[wn] = {Shape{d, n}, 0, 0};
  }
  return out;
}

Checkpoint gather_moe(std::span<const Shard> shards) {
  if (shards.empty()) fail(ErrorCode::kMissingTile, "gather: no shards given");
  const ShardSpec& ref = shards.front().spec;
  const std::size_t world = ref.tp_size * ref.ep_size;
  std::vector<const Shard*> by_rank(world, nullptr);
  for (const Shard& s : shards) {
    if (s.spec.tp_size != ref.tp_size || s.spec.ep_size != ref.ep_size) {
      fail(ErrorCode::kSchema, "gather: shards disagree on tp/ep sizes");
    }
    if (s.spec.rank >= world || s.spec.rank != s.spec.ep_index * s.spec.tp_size + s.spec.tp_index) {
      fail(ErrorCode::kSchema, "gather: inconsistent rank " + std::to_string(s.spec.rank));
    }
    if (by_rank[s.spec.rank]) {
      fail(ErrorCode::kOverlappingTile, "gather: rank " + std::to_string(s.spec.rank) +
                                            " supplied twice");
    }
    if (!(s.payload.config == shards.front().payload.config)) {
      fail(ErrorCode::kReplicaMismatch, "gather: rank " + std::to_string(s.spec.rank) +
                                            " has a different model config");
    }
    by_rank[s.spec.rank] = &s;
  }
  for (std::size_t r = 0; r < world; ++r) {
    if (!by_rank[r]) {
      fail(ErrorCode::kMissingTile, "missing tile: no shard for rank " + std::to_string(r) +
                                        " (tp " + std::to_string(r % ref.tp_size) + ", ep " +
                                        std::to_string(r / ref.tp_size) + ")");
    }
  }

  Checkpoint out;
  const Checkpoint& first = by_rank[0]->payload;
  out.config = first.config;
  out.dtype = first.dtype;
  out.moe = first.moe;

  struct Placed {
    std::size_t rank;
    const Tensor* tensor;
    Tile tile;
  };
  std::map<std::string, std::vector<Placed>> pieces;
  for (const Shard* s : by_rank) {
    for (const auto& [name, tensor] : s->payload.tensors) {
      auto it = s->tiles.find(name);
      if (it == s->tiles.end()) {
        fail(ErrorCode::kSchema, "rank " + std::to_string(s->spec.rank) +
                                     " has no tile record for '" + name + "'");
      }
      pieces[name].push_back({s->spec.rank, &tensor, it->second});
    }
  }

  for (auto& [name, list] : pieces) {
    const Shape& full_shape = list.front().tile.full_shape;
    const std::size_t cols = full_shape.size() == 2 ? full_shape[1] : 1;
    std::vector<double> full(shape_numel(full_shape), 0.0);
    std::vector<std::uint8_t> covered(full.size(), 0);
    // Distinct tile positions; repeats are replicas of the same tile.
    std::map<std::tuple<std::size_t, std::size_t, Shape>, const Placed*> unique;
    for (const Placed& p : list) {
      if (p.tile.full_shape != full_shape) {
        fail(ErrorCode::kReplicaMismatch, "tensor '" + name + "' has a different full shape on rank " +
                                              std::to_string(p.rank));
      }
      const auto key = std::make_tuple(p.tile.row0, p.tile.col0, p.tensor->shape());
      auto [it, inserted] = unique.emplace(key, &p);
      if (!inserted) {
        if (!bitwise_equal(*it->second->tensor, *p.tensor)) {
          fail(ErrorCode::kReplicaMismatch, "replica mismatch in tensor '" + name + "' between rank " +
                                                std::to_string(it->second->rank) + " and rank " +
                                                std::to_string(p.rank));
        }
        continue;
      }
      const Shape& ts = p.tensor->shape();
      const std::size_t trows = ts.size() == 2 ? ts[0] : (ts.empty() ? 1 : ts[0]);
      const std::size_t tcols = ts.size() == 2 ? ts[1] : 1;
      if (ts.size() != full_shape.size() || p.tile.row0 + trows > (full_shape.empty() ? 1 : full_shape[0]) ||
          p.tile.col0 + tcols > cols) {
        fail(ErrorCode::kSchema, "tile of '" + name + "' on rank " + std::to_string(p.rank) +
                                     " lies outside the full tensor");
      }
      for (std::size_t r = 0; r < trows; ++r) {
        for (std::size_t c = 0; c < tcols; ++c) {
          const std::size_t idx = (p.tile.row0 + r) * cols + p.tile.col0 + c;
          if (covered[idx]) {
            fail(ErrorCode::kOverlappingTile, "overlapping tiles in tensor '" + name +
                                                  "' (rank " + std::to_string(p.rank) + ")");
          }
          covered[idx] = 1;
          full[idx] = p.tensor->data()[r * tcols + c];
        }
      }
    }
    if (std::find(covered.begin(), covered.end(), 0) != covered.end()) {
      fail(ErrorCode::kMissingTile, "missing tile: tensor '" + name + "' is not fully covered");
    }
    out.tensors.emplace(name, Tensor::from(full_shape, std::move(full)));
  }
  validate_checkpoint(out);
  return out;
}

EquivalenceReport verify_equivalence(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.config == b.config)) fail(ErrorCode::kSchema, "checkpoints have different model configs");
  if (a.tensors.size() != b.tensors.size()) {
    fail(ErrorCode::kSchema, "checkpoints hold " + std::to_string(a.tensors.size()) + " and " +
                                 std::to_string(b.tensors.size()) + " tensors");
  }
  EquivalenceReport report;
  for (const auto& [name, ta] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end()) fail(ErrorCode::kSchema, "tensor '" + name + "' missing from second checkpoint");
    const Tensor& tb = it->second;
    if (ta.shape() != tb.shape()) {
      fail(ErrorCode::kSchema, "tensor '" + name + "' shapes differ: " + shape_str(ta.shape()) +
                                   " vs " + shape_str(tb.shape()));
    }
    ++report.tensors_compared;
    for (std::size_t i = 0; i < ta.numel(); ++i) {
      const double x = ta.data()[i], y = tb.data()[i];
      if (std::memcmp(&x, &y, sizeof(double)) != 0) {
        if (report.equal) {
          report.equal = false;
          report.first_tensor = name;
          report.first_index = i;
          report.a_value = x;
          report.b_value = y;
        }
        ++report.differing_tensors;
        break;
      }
    }
  }
  return report;
}

void save_shard(const Shard& shard, const std::filesystem::path& dir) {
  save_checkpoint(shard.payload, dir, false);
  Json j;
  j["rank"] = shard.spec.rank;
  j["tp"] = {{"index", shard.spec.tp_index}, {"size", shard.spec.tp_size}};
  j["ep"] = {{"index", shard.spec.ep_index}, {"size", shard.spec.ep_size}};
  Json tiles = Json::array();
  for (const auto& [name, tile] : shard.tiles) {
    tiles.push_back({{"name", name}, {"full_shape", tile.full_shape},
                     {"row0", tile.row0}, {"col0", tile.col0}});
  }
  j["tiles"] = std::move(tiles);
  std::ofstream out(dir / "shard.json", std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + (dir / "shard.json").string());
  out << j.dump(2) << '\n';
}

Shard load_shard(const std::filesystem::path& dir) {
  Shard shard;
  shard.payload = load_checkpoint(dir, false);
  std::ifstream in(dir / "shard.json");
  if (!in) fail(ErrorCode::kIo, "cannot open " + (dir / "shard.json").string());
  try {
    const Json j = Json::parse(in);
    shard.spec.rank = j.at("rank").get<std::size_t>();
    shard.spec.tp_index = j.at("tp").at("index").get<std::size_t>();
    shard.spec.tp_size = j.at("tp").at("size").get<std::size_t>();
    shard.spec.ep_index = j.at("ep").at("index").get<std::size_t>();
    shard.spec.ep_size = j.at("ep").at("size").get<std::size_t>();
    for (const Json& t : j.at("tiles")) {
      shard.tiles[t.at("name").get<std::string>()] = {
          t.at("full_shape").get<Shape>(), t.at("row0").get<std::size_t>(),
          t.at("col0").get<std::size_t>()};
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kSchema, (dir / "shard.json").string() + ": " + e.what());
  }
  return shard;
}

}  // namespace moeup

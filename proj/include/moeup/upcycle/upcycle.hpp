// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_UPCYCLE_UPCYCLE_HPP_
#define MOEUP_UPCYCLE_UPCYCLE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeup/model/checkpoint.hpp"
#include "moeup/moe/gating.hpp"

namespace moeup {

struct UpcycleOptions {
  GateConfig gate;
  // Layers whose FFN becomes an MoE block; std::nullopt means every layer.
  std::optional<std::vector<std::size_t>> moe_layers;
  std::uint64_t router_seed = 0;
  double router_std = 0.02;
};

// W_g for one layer: N(0, router_std^2) drawn row-major from
// Rng(router_seed, layer). Every rank computes the same values.
Tensor init_router_weights(const UpcycleOptions& opts, std::size_t layer,
                           std::size_t hidden);

// Every expert of every converted layer is a bitwise copy of that layer's
// FFN; routers are fresh (W_noise = 0); all other tensors are copied.
MoECheckpoint upcycle_full(const DenseCheckpoint& dense, const UpcycleOptions& opts);

struct ShardSpec {
  std::size_t rank = 0;
  std::size_t tp_index = 0;
  std::size_t tp_size = 1;
  std::size_t ep_index = 0;
  std::size_t ep_size = 1;
};

// Where a payload tensor sits inside the full tensor of the same name.
struct Tile {
  Shape full_shape;
  std::size_t row0 = 0;
  std::size_t col0 = 0;
};

// One simulated rank: a checkpoint whose FFN tensors may be tiles.
struct Shard {
  ShardSpec spec;
  Checkpoint payload;
  std::map<std::string, Tile> tiles;
};

// Ranks are numbered tp-fastest: rank = ep_index * tp + tp_index. FFN W1/W3
// are split by columns and W2 by rows across tp; each ep rank keeps a full
// copy of its tp slice; everything else is replicated.
std::vector<Shard> shard_dense(const DenseCheckpoint& dense, std::size_t tp,
                               std::size_t ep);

// Upcycles one rank locally: experts owned by this ep rank (a contiguous
// block of N / ep) are copies of the local FFN slice, routers come from
// init_router_weights.
Shard upcycle_shard(const Shard& shard, const UpcycleOptions& opts);

// Reassembles a full checkpoint. Throws kMissingTile for an absent rank or
// uncovered elements, kOverlappingTile for partially overlapping tiles and
// kReplicaMismatch when copies of the same tile differ.
Checkpoint gather_moe(std::span<const Shard> shards);

struct EquivalenceReport {
  bool equal = true;
  std::size_t tensors_compared = 0;
  std::size_t differing_tensors = 0;
  std::string first_tensor;
  std::size_t first_index = 0;
  double a_value = 0.0;
  double b_value = 0.0;
};

// Bitwise per-tensor comparison; kSchema when the tensor sets or shapes
// differ.
EquivalenceReport verify_equivalence(const Checkpoint& a, const Checkpoint& b);

// Shard directory: the checkpoint format plus shard.json describing the rank
// and the tile of every tensor.
void save_shard(const Shard& shard, const std::filesystem::path& dir);
Shard load_shard(const std::filesystem::path& dir);

}  // namespace moeup

#endif  // MOEUP_UPCYCLE_UPCYCLE_HPP_

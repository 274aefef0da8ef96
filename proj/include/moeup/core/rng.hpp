// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_CORE_RNG_HPP_
#define MOEUP_CORE_RNG_HPP_

#include <array>
#include <cstdint>

namespace moeup {

// Counter-based generator: Philox4x32-10 (Salmon et al., SC'11).
//
//   key     = (seed & 0xffffffff, seed >> 32)
//   counter = (index & 0xffffffff, index >> 32,
//              stream & 0xffffffff, stream >> 32)
//
// Draw number `index` of (seed, stream) is a pure function of those three
// values, so two holders of the same (seed, stream) reproduce the same
// sequence without sharing state. Each draw consumes one counter block:
//
//   uniform: (w0 >> 5, w1 >> 6) combined into a 53-bit value in [0, 1)
//   normal : Box-Muller on u1 = 1 - uniform(w0, w1), u2 = uniform(w2, w3),
//            z = sqrt(-2 ln u1) * cos(2 pi u2)
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t position() const { return index_; }

  std::array<std::uint32_t, 4> block(std::uint64_t index) const;

  double uniform_at(std::uint64_t index) const;
  double normal_at(std::uint64_t index) const;

  double uniform() { return uniform_at(index_++); }
  double normal() { return normal_at(index_++); }
  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
};

}  // namespace moeup

#endif  // MOEUP_CORE_RNG_HPP_

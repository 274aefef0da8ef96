// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace moeup {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

double to_unit(std::uint32_t hi_word, std::uint32_t lo_word) {
  const std::uint64_t a = hi_word >> 5;  // 27 bits
  const std::uint64_t b = lo_word >> 6;  // 26 bits
  return static_cast<double>((a << 26) | b) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> Rng::block(std::uint64_t index) const {
  std::array<std::uint32_t, 4> ctr{
      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
      static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
  std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return ctr;
}

double Rng::uniform_at(std::uint64_t index) const {
  const auto w = block(index);
  return to_unit(w[0], w[1]);
}

double Rng::normal_at(std::uint64_t index) const {
  const auto w = block(index);
  const double u1 = 1.0 - to_unit(w[0], w[1]);  // (0, 1]
  const double u2 = to_unit(w[2], w[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  const auto value = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  return value < n ? value : n - 1;
}

}  // namespace moeup

// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef HMCVI_RNG_HPP_
#define HMCVI_RNG_HPP_

#include <cstdint>
#include <random>

namespace hmcvi {

using Rng = std::mt19937_64;

/// Purposes that key independent streams drawn for the same datum.
enum class StreamPurpose : std::uint64_t {
  chain = 1,
  binarize = 2,
  eval_draw = 3,
  importance = 4,
  init = 5,
  shuffle = 6,
};

/// Independent generator keyed by (seed, epoch, index, purpose). The stream
/// depends only on these keys, never on which worker consumes it.
inline Rng make_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index,
                       StreamPurpose purpose) {
  auto lo = [](std::uint64_t x) { return static_cast<std::uint32_t>(x & 0xffffffffu); };
  auto hi = [](std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); };
  const auto p = static_cast<std::uint64_t>(purpose);
  std::seed_seq seq{lo(seed), hi(seed), lo(epoch), hi(epoch), lo(index), hi(index), lo(p), hi(p)};
  return Rng(seq);
}

}  // namespace hmcvi

#endif  // HMCVI_RNG_HPP_

// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace cacheaudit {

/// Seedable random source shared by every module. Callers own their engine;
/// nothing in the library keeps hidden global state.
using Rng = std::mt19937_64;

/// Derives an independent child stream from a parent seed and a stream tag.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

}  // namespace cacheaudit

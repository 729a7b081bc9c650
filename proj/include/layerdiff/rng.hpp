// Copyright (C) 2026 The layerdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "layerdiff/tensor.hpp"

namespace layerdiff {

/// Deterministic random stream.
///
/// Algorithm: xoshiro256** whose four state words are the first four outputs
/// of SplitMix64 started at the seed. Uniform doubles take the top 53 bits of
/// a 64-bit draw, giving values in [0, 1). Normal variates use the
/// Box-Muller transform on a pair of uniforms (u1 mapped to (0, 1]); the second
/// value of each pair is cached and returned by the next call.
///
/// Sub-streams: split(key) returns a fresh generator seeded with
/// SplitMix64(seed XOR SplitMix64(key)), so children depend only on the
/// parent's seed and the key, never on how far the parent has advanced.
class DRng {
public:
    struct State {
        std::uint64_t seed = 0;
        std::array<std::uint64_t, 4> words{};
        std::optional<double> spare;
    };

    explicit DRng(std::uint64_t seed = 0);

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;
    /// Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
    double normal() noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

    DRng split(std::uint64_t key) const noexcept;
    std::uint64_t seed() const noexcept { return seed_; }

    State state() const;
    static DRng from_state(const State& state);

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
    std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// i.i.d. standard normal samples.
Tensor randn(const Shape& shape, DRng& rng);

}  // namespace layerdiff

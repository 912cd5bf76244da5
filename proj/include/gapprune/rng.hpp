// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gapprune {

/// xoshiro256** seeded through splitmix64.
///
/// The stream depends only on the seed, never on the platform or standard
/// library, so datasets and weights reproduce everywhere. Uniform reals take
/// the top 53 bits; normals use Box-Muller with both outputs consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;
    double normal() noexcept;
    // Uniform integer in [0, bound); bound must be positive.
    std::uint64_t below(std::uint64_t bound);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }
    template <typename T>
    void shuffle(std::vector<T>& items) {
        shuffle(std::span<T>(items));
    }

    // Independent generator for sub-stream `index`, e.g. one per example.
    Rng fork(std::uint64_t index) const noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace gapprune

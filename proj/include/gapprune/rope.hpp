// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gapprune/matrix.hpp"

namespace gapprune {

// One non-negative position per token. Values need not be contiguous: after
// pruning with preserved ids there are holes where dropped tokens used to be.
using PositionIds = std::vector<std::int64_t>;

struct RopeConfig {
    int head_dim = 8;
    double theta_base = 10000.0;
    int num_heads = 1;

    // Throws ConfigError for odd or non-positive head_dim, theta_base <= 1 or
    // num_heads < 1.
    void validate() const;
};

PositionIds sequential_ids(std::int64_t start, std::int64_t count);

// Rotates each row of x (rows = ids.size(), cols = head_dim). Dimensions 2j
// and 2j+1 form a pair rotated by id * theta_base^(-2j/head_dim).
Matrix apply_rope(const Matrix& x, const PositionIds& ids, const RopeConfig& cfg);

// Same rotation applied independently to every head of a row laid out as
// num_heads consecutive blocks of head_dim. With inverse set the rotation is
// undone (used by the backward pass).
void apply_rope_heads(Matrix& x, std::span<const std::int64_t> ids, const RopeConfig& cfg,
                      bool inverse = false);

// dot(rope(q, m), rope(k, n)).
double rope_logit(std::span<const double> q, std::span<const double> k, std::int64_t m,
                  std::int64_t n, const RopeConfig& cfg);

}  // namespace gapprune

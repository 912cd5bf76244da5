// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gapprune/matrix.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/rope.hpp"

namespace gapprune {

enum class Strategy { none, cls_visual, text_visual, random, spatial };

// gap keeps each survivor's original id, shifted renumbers survivors
// consecutively, permuted reorders by score and numbers sequentially.
enum class Alignment { gap, shifted, permuted };

std::string_view to_string(Strategy s) noexcept;
std::string_view to_string(Alignment a) noexcept;
Strategy parse_strategy(std::string_view name);
Alignment parse_alignment(std::string_view name);

using ScoreVector = std::vector<double>;
using IndexList = std::vector<std::size_t>;

struct PruneSelection {
    Strategy strategy = Strategy::none;
    double ratio = 1.0;
    IndexList indices;  // ascending original indices
    Alignment alignment = Alignment::gap;
};

// max(1, floor(n * ratio)). A 1e-9 slack absorbs representation error so that
// decimal ratios such as 0.7 give floor(10 * 0.7) = 7.
std::size_t retained_count(std::size_t n, double ratio);

// Highest k scores, ties to the lower index, returned in ascending index order.
IndexList topk_select(std::span<const double> scores, std::size_t k);

// Rows of v at indices, in the given order.
Matrix gather(const Matrix& v, std::span<const std::size_t> indices);

ScoreVector score_cls_visual(std::span<const double> cls_query, const Matrix& keys, std::size_t d_k);
ScoreVector score_text_visual(const Matrix& text_queries, const Matrix& visual_keys, std::size_t d_k);
ScoreVector score_random(std::size_t n, Rng& rng);

// Stride sampling: i_m = floor(m / ratio) for m < retained_count(n, ratio).
IndexList select_spatial(std::size_t n, double ratio);

PositionIds align_gap(std::span<const std::size_t> indices, std::int64_t visual_base);
PositionIds align_shifted(std::span<const std::size_t> indices, std::int64_t visual_base);

// Indices sorted by descending score, ties to the lower index.
IndexList descending_order(std::span<const double> scores);

struct Permuted {
    Matrix tokens;
    PositionIds ids;
    IndexList order;  // tokens.row(j) == v.row(order[j])
};

// Reorders every token by descending score and numbers them sequentially
// from visual_base. Nothing is removed.
Permuted permute_by_score(const Matrix& v, std::span<const double> scores,
                          std::int64_t visual_base = 0);

}  // namespace gapprune

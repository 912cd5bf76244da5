// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

constexpr double kFloorSlack = 1e-9;

void check_ratio(double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw ConfigError("reduction ratio must lie in (0, 1], got " + std::to_string(ratio));
    }
}

void check_ascending(std::span<const std::size_t> indices) {
    for (std::size_t j = 1; j < indices.size(); ++j) {
        if (indices[j] <= indices[j - 1]) {
            throw InputError("selection indices must be strictly ascending");
        }
    }
}

}  // namespace

std::string_view to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::none: return "none";
        case Strategy::cls_visual: return "cls_visual";
        case Strategy::text_visual: return "text_visual";
        case Strategy::random: return "random";
        case Strategy::spatial: return "spatial";
    }
    return "none";
}

std::string_view to_string(Alignment a) noexcept {
    switch (a) {
        case Alignment::gap: return "gap";
        case Alignment::shifted: return "shifted";
        case Alignment::permuted: return "permuted";
    }
    return "gap";
}

Strategy parse_strategy(std::string_view name) {
    for (Strategy s : {Strategy::none, Strategy::cls_visual, Strategy::text_visual, Strategy::random,
                       Strategy::spatial}) {
        if (name == to_string(s)) {
            return s;
        }
    }
    throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

Alignment parse_alignment(std::string_view name) {
    for (Alignment a : {Alignment::gap, Alignment::shifted, Alignment::permuted}) {
        if (name == to_string(a)) {
            return a;
        }
    }
    throw ConfigError("unknown alignment '" + std::string(name) + "'");
}

std::size_t retained_count(std::size_t n, double ratio) {
    check_ratio(ratio);
    if (n == 0) {
        throw InputError("retained_count: no tokens");
    }
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + kFloorSlack));
    return std::clamp<std::size_t>(k, 1, n);
}

IndexList descending_order(std::span<const double> scores) {
    IndexList order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

IndexList topk_select(std::span<const double> scores, std::size_t k) {
    if (k < 1 || k > scores.size()) {
        throw InputError("topk_select: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(scores.size()) + "]");
    }
    IndexList order = descending_order(scores);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

Matrix gather(const Matrix& v, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), v.cols());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] >= v.rows()) {
            throw InputError("gather: index " + std::to_string(indices[j]) + " out of range for " +
                             std::to_string(v.rows()) + " rows");
        }
        std::copy_n(v.row(indices[j]).data(), v.cols(), out.row(j).data());
    }
    return out;
}

ScoreVector score_cls_visual(std::span<const double> cls_query, const Matrix& keys, std::size_t d_k) {
    if (cls_query.size() != d_k || keys.cols() != d_k) {
        throw ShapeError("score_cls_visual: query and key width must equal d_k");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
    ScoreVector s(keys.rows());
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        s[i] = dot(cls_query, keys.row(i)) * scale;
    }
    softmax_inplace(s);
    return s;
}

ScoreVector score_text_visual(const Matrix& text_queries, const Matrix& visual_keys, std::size_t d_k) {
    if (text_queries.rows() == 0) {
        throw InputError("score_text_visual: at least one text query is required");
    }
    if (text_queries.cols() != d_k) {
        throw ShapeError("score_text_visual: query width must equal d_k");
    }
    ScoreVector total(visual_keys.rows(), 0.0);
    for (std::size_t t = 0; t < text_queries.rows(); ++t) {
        const ScoreVector s = score_cls_visual(text_queries.row(t), visual_keys, d_k);
        for (std::size_t i = 0; i < s.size(); ++i) {
            total[i] += s[i];
        }
    }
    return total;
}

ScoreVector score_random(std::size_t n, Rng& rng) {
    ScoreVector s(n);
    for (double& v : s) {
        v = rng.uniform();
    }
    return s;
}

IndexList select_spatial(std::size_t n, double ratio) {
    const std::size_t k = retained_count(n, ratio);
    IndexList out(k);
    for (std::size_t m = 0; m < k; ++m) {
        const auto i = static_cast<std::size_t>(std::floor(static_cast<double>(m) / ratio + kFloorSlack));
        out[m] = std::min(i, n - 1);
    }
    return out;
}

PositionIds align_gap(std::span<const std::size_t> indices, std::int64_t visual_base) {
    check_ascending(indices);
    PositionIds ids(indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        ids[j] = visual_base + static_cast<std::int64_t>(indices[j]);
    }
    return ids;
}

PositionIds align_shifted(std::span<const std::size_t> indices, std::int64_t visual_base) {
    check_ascending(indices);
    return sequential_ids(visual_base, static_cast<std::int64_t>(indices.size()));
}

Permuted permute_by_score(const Matrix& v, std::span<const double> scores, std::int64_t visual_base) {
    if (scores.size() != v.rows()) {
        throw ShapeError("permute_by_score: one score per token is required");
    }
    Permuted out;
    out.order = descending_order(scores);
    out.tokens = gather(v, out.order);
    out.ids = sequential_ids(visual_base, static_cast<std::int64_t>(v.rows()));
    return out;
}

}  // namespace gapprune

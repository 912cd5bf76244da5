// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gapprune/errors.hpp"
#include "gapprune/pruning.hpp"
#include "support.hpp"

using namespace gapprune;
using namespace gapprune::testing;

namespace {

IndexList iota_list(std::size_t n) {
    IndexList v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

ScoreVector direct_cls_scores(std::span<const double> q, const Matrix& keys, std::size_t d_k) {
    std::vector<double> logits;
    for (std::size_t j = 0; j < keys.rows(); ++j) {
        long double s = 0.0L;
        for (std::size_t c = 0; c < q.size(); ++c) {
            s += static_cast<long double>(q[c]) * keys(j, c);
        }
        logits.push_back(static_cast<double>(s / std::sqrt(static_cast<long double>(d_k))));
    }
    return naive_softmax(logits);
}

}  // namespace

TEST_CASE("retained_count") {
    CHECK(retained_count(576, 0.5) == 288);
    CHECK(retained_count(5, 1.0) == 5);
    CHECK(retained_count(10, 0.05) == 1);
    CHECK(retained_count(10, 0.3) == 3);
    CHECK(retained_count(16, 0.25) == 4);
    CHECK_THROWS_AS(retained_count(10, 0.0), ConfigError);
    CHECK_THROWS_AS(retained_count(10, 1.5), ConfigError);
    CHECK_THROWS_AS(retained_count(10, -0.1), ConfigError);
}

TEST_CASE("topk_select") {
    CHECK(topk_select(std::vector<double>{4, 2, 1, 5, 3}, 2) == IndexList{0, 3});
    CHECK(topk_select(std::vector<double>{4, 2, 1, 5, 3}, 5) == iota_list(5));
    CHECK(topk_select(std::vector<double>{7, 7, 7}, 2) == IndexList{0, 1});
    CHECK_THROWS_AS(topk_select(std::vector<double>{1, 2}, 3), InputError);
    CHECK_THROWS_AS(topk_select(std::vector<double>{1, 2}, 0), InputError);
}

TEST_CASE("gather") {
    Rng rng(1);
    const Matrix v = random_matrix(5, 3, rng);
    CHECK(gather(v, iota_list(5)) == v);
    const Matrix g = gather(v, IndexList{2, 3, 4});
    REQUIRE(g.rows() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(g(j, c) == v(j + 2, c));
        }
    }
    CHECK_THROWS_AS(gather(v, IndexList{5}), InputError);
}

TEST_CASE("score_cls_visual") {
    Rng rng(2);
    const Matrix keys = Matrix::identity(4);
    const std::vector<double> q{0.0, 0.0, 3.0, 0.0};
    const ScoreVector s = score_cls_visual(q, keys, 4);
    CHECK(std::max_element(s.begin(), s.end()) - s.begin() == 2);
    CHECK(std::count(s.begin(), s.end(), s[2]) == 1);

    Matrix same(6, 4, 0.7);
    for (double v : score_cls_visual(q, same, 4)) {
        CHECK(std::abs(v - 1.0 / 6.0) < 1e-15);
    }
    for (int t = 0; t < 20; ++t) {
        const Matrix k = random_matrix(9, 8, rng);
        const Matrix qm = random_matrix(1, 8, rng);
        const ScoreVector got = score_cls_visual(qm.row(0), k, 8);
        const ScoreVector want = direct_cls_scores(qm.row(0), k, 8);
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(std::abs(got[i] - want[i]) < 1e-12);
        }
        CHECK(std::abs(std::accumulate(got.begin(), got.end(), 0.0) - 1.0) < 1e-12);
    }
}

TEST_CASE("score_text_visual") {
    Rng rng(3);
    const Matrix keys = random_matrix(7, 8, rng);
    const Matrix one = random_matrix(1, 8, rng);
    CHECK(score_text_visual(one, keys, 8) == score_cls_visual(one.row(0), keys, 8));
    Matrix two = one;
    two.append_row(one.row(0));
    const ScoreVector doubled = score_text_visual(two, keys, 8);
    const ScoreVector single = score_cls_visual(one.row(0), keys, 8);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(doubled[i] == 2.0 * single[i]);
    }
    const Matrix three = random_matrix(3, 8, rng);
    const ScoreVector s = score_text_visual(three, keys, 8);
    CHECK(std::abs(std::accumulate(s.begin(), s.end(), 0.0) - 3.0) < 1e-10);
    CHECK_THROWS_AS(score_text_visual(Matrix(0, 8), keys, 8), InputError);
}

TEST_CASE("score_random") {
    Rng a(42);
    Rng b(42);
    CHECK(score_random(10, a) == score_random(10, b));
    Rng c(42);
    const ScoreVector s = score_random(100000, c);
    CHECK(std::abs(std::accumulate(s.begin(), s.end(), 0.0) / 1e5 - 0.5) < 0.01);
    Rng d(1);
    const ScoreVector one = score_random(1, d);
    CHECK(one[0] >= 0.0);
    CHECK(one[0] < 1.0);
}

TEST_CASE("select_spatial") {
    CHECK(select_spatial(8, 0.5) == IndexList{0, 2, 4, 6});
    CHECK(select_spatial(6, 1.0 / 3.0) == IndexList{0, 3});
    CHECK(select_spatial(7, 1.0) == iota_list(7));
}

TEST_CASE("alignment modes") {
    CHECK(align_gap(IndexList{2, 3, 4}, 0) == PositionIds{2, 3, 4});
    CHECK(align_gap(IndexList{0, 4}, 10) == PositionIds{10, 14});
    CHECK(align_gap(iota_list(6), 3) == sequential_ids(3, 6));
    CHECK(align_shifted(IndexList{2, 3, 4}, 0) == PositionIds{0, 1, 2});
    CHECK(align_shifted(IndexList{0, 4}, 10) == PositionIds{10, 11});
    CHECK(align_shifted(iota_list(6), 3) == align_gap(iota_list(6), 3));
    CHECK_THROWS_AS(align_gap(IndexList{3, 1}, 0), InputError);
}

TEST_CASE("permute_by_score") {
    Rng rng(4);
    const Matrix v = random_matrix(3, 4, rng);
    const Permuted p = permute_by_score(v, std::vector<double>{1, 3, 2});
    CHECK(p.order == IndexList{1, 2, 0});
    CHECK(p.ids == PositionIds{0, 1, 2});
    Matrix restored(3, 4);
    for (std::size_t j = 0; j < 3; ++j) {
        std::copy_n(p.tokens.row(j).data(), 4, restored.row(p.order[j]).data());
    }
    CHECK(restored == v);

    const Permuted same = permute_by_score(v, std::vector<double>{5, 5, 5});
    CHECK(same.order == iota_list(3));
    CHECK(same.tokens == v);

    // The five-token worked example: descending score order.
    const Permuted five = permute_by_score(random_matrix(5, 2, rng), std::vector<double>{4, 2, 1, 5, 3});
    CHECK(five.order == IndexList{3, 0, 4, 1, 2});
}

TEST_CASE("names round-trip") {
    for (Strategy s : {Strategy::none, Strategy::cls_visual, Strategy::text_visual, Strategy::random,
                       Strategy::spatial}) {
        CHECK(parse_strategy(to_string(s)) == s);
    }
    for (Alignment a : {Alignment::gap, Alignment::shifted, Alignment::permuted}) {
        CHECK(parse_alignment(to_string(a)) == a);
    }
    CHECK_THROWS_AS(parse_strategy("magic"), ConfigError);
    CHECK_THROWS_AS(parse_alignment("sideways"), ConfigError);
}

TEST_CASE("selection properties over every n and ratio") {
    Rng rng(5);
    for (std::size_t n = 1; n <= 64; ++n) {
        for (int step = 1; step <= 10; ++step) {
            const double r = step / 10.0;
            const std::size_t k = retained_count(n, r);
            CHECK(k == std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * r + 1e-9))));
            const ScoreVector s = score_random(n, rng);
            const IndexList top = topk_select(s, k);
            const IndexList spatial = select_spatial(n, r);
            for (const IndexList* idx : {&top, &spatial}) {
                REQUIRE(idx->size() == k);
                CHECK(std::is_sorted(idx->begin(), idx->end()));
                CHECK(std::adjacent_find(idx->begin(), idx->end()) == idx->end());
                CHECK(idx->back() < n);
            }
            // Every kept score beats every dropped one.
            double kept_min = 2.0;
            for (std::size_t i : top) {
                kept_min = std::min(kept_min, s[i]);
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (!std::binary_search(top.begin(), top.end(), i)) {
                    CHECK(s[i] <= kept_min);
                }
            }
            // Even spacing: stride gaps differ by at most one.
            if (spatial.size() > 2) {
                std::size_t lo = n;
                std::size_t hi = 0;
                for (std::size_t j = 1; j < spatial.size(); ++j) {
                    lo = std::min(lo, spatial[j] - spatial[j - 1]);
                    hi = std::max(hi, spatial[j] - spatial[j - 1]);
                }
                CHECK(hi - lo <= 1);
            }
            // GAP keeps pairwise id gaps, shifted compresses them to rank gaps.
            const PositionIds g = align_gap(top, 1);
            const PositionIds sh = align_shifted(top, 1);
            for (std::size_t j = 1; j < k; ++j) {
                CHECK(g[j] - g[0] == static_cast<std::int64_t>(top[j] - top[0]));
                CHECK(sh[j] - sh[0] == static_cast<std::int64_t>(j));
            }
        }
    }
}

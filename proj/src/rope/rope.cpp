// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/rope.hpp"

#include <cmath>
#include <string>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

double inverse_frequency(int pair, const RopeConfig& cfg) {
    return std::pow(cfg.theta_base, -2.0 * pair / static_cast<double>(cfg.head_dim));
}

// cos/sin of id * inv_freq[j] for every pair j; shared by all heads of a row.
struct Angles {
    std::vector<double> inv_freq;
    std::vector<double> cos;
    std::vector<double> sin;

    explicit Angles(const RopeConfig& cfg)
        : inv_freq(static_cast<std::size_t>(cfg.head_dim / 2)),
          cos(inv_freq.size()),
          sin(inv_freq.size()) {
        for (std::size_t j = 0; j < inv_freq.size(); ++j) {
            inv_freq[j] = inverse_frequency(static_cast<int>(j), cfg);
        }
    }

    void set(std::int64_t id, double sign) {
        for (std::size_t j = 0; j < inv_freq.size(); ++j) {
            const double angle = static_cast<double>(id) * inv_freq[j];
            cos[j] = std::cos(angle);
            sin[j] = sign * std::sin(angle);
        }
    }

    void rotate(double* v) const {
        for (std::size_t j = 0; j < inv_freq.size(); ++j) {
            const double x0 = v[2 * j];
            const double x1 = v[2 * j + 1];
            v[2 * j] = x0 * cos[j] - x1 * sin[j];
            v[2 * j + 1] = x0 * sin[j] + x1 * cos[j];
        }
    }
};

void check_ids(std::size_t rows, std::size_t count) {
    if (rows != count) {
        throw ShapeError("rope: " + std::to_string(rows) + " rows but " + std::to_string(count) +
                         " position ids");
    }
}

}  // namespace

void RopeConfig::validate() const {
    if (head_dim <= 0 || head_dim % 2 != 0) {
        throw ConfigError("rope head_dim must be a positive even number, got " +
                          std::to_string(head_dim));
    }
    if (!(theta_base > 1.0)) {
        throw ConfigError("rope theta_base must exceed 1");
    }
    if (num_heads < 1) {
        throw ConfigError("rope num_heads must be at least 1");
    }
}

PositionIds sequential_ids(std::int64_t start, std::int64_t count) {
    if (count < 0) {
        throw InputError("sequential_ids: negative count");
    }
    PositionIds ids(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        ids[static_cast<std::size_t>(i)] = start + i;
    }
    return ids;
}

Matrix apply_rope(const Matrix& x, const PositionIds& ids, const RopeConfig& cfg) {
    cfg.validate();
    check_ids(x.rows(), ids.size());
    if (x.cols() != static_cast<std::size_t>(cfg.head_dim)) {
        throw ShapeError("apply_rope: row width must equal head_dim");
    }
    Matrix out = x;
    Angles angles(cfg);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        angles.set(ids[r], 1.0);
        angles.rotate(out.row(r).data());
    }
    return out;
}

void apply_rope_heads(Matrix& x, std::span<const std::int64_t> ids, const RopeConfig& cfg,
                      bool inverse) {
    cfg.validate();
    check_ids(x.rows(), ids.size());
    const std::size_t width = static_cast<std::size_t>(cfg.head_dim) * cfg.num_heads;
    if (x.cols() != width) {
        throw ShapeError("apply_rope_heads: row width must equal num_heads * head_dim");
    }
    Angles angles(cfg);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        angles.set(ids[r], inverse ? -1.0 : 1.0);
        double* row = x.row(r).data();
        for (int h = 0; h < cfg.num_heads; ++h) {
            angles.rotate(row + static_cast<std::size_t>(h) * cfg.head_dim);
        }
    }
}

double rope_logit(std::span<const double> q, std::span<const double> k, std::int64_t m,
                  std::int64_t n, const RopeConfig& cfg) {
    cfg.validate();
    const std::size_t hd = static_cast<std::size_t>(cfg.head_dim);
    if (q.size() != hd || k.size() != hd) {
        throw ShapeError("rope_logit: vectors must have head_dim entries");
    }
    std::vector<double> qr(q.begin(), q.end());
    std::vector<double> kr(k.begin(), k.end());
    Angles angles(cfg);
    angles.set(m, 1.0);
    angles.rotate(qr.data());
    angles.set(n, 1.0);
    angles.rotate(kr.data());
    return dot(qr, kr);
}

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

// Small configs and independent reference implementations shared by tests.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gapprune/matrix.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/weights.hpp"

namespace gapprune::testing {

inline ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.grid_size = 2;
    cfg.num_colors = 4;
    cfg.d_model = 16;
    cfg.num_heads = 2;
    cfg.head_dim = 8;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 2;
    cfg.vocab_size = cfg.min_vocab();
    cfg.max_seq_len = 32;
    cfg.init_std = 0.3;
    return cfg;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = scale * rng.normal();
    }
    return m;
}

// Textbook triple loop, accumulated in long double.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double acc = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += static_cast<long double>(a(i, k)) * b(k, j);
            }
            c(i, j) = static_cast<double>(acc);
        }
    }
    return c;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
    long double total = 0.0L;
    for (double v : x) {
        total += std::exp(static_cast<long double>(v));
    }
    std::vector<double> out;
    for (double v : x) {
        out.push_back(static_cast<double>(std::exp(static_cast<long double>(v)) / total));
    }
    return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

// Relative error of an analytic gradient against a central difference, with
// an absolute floor for entries that are essentially zero.
inline double gradient_error(double analytic, double numeric, double floor = 1e-7) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace gapprune::testing

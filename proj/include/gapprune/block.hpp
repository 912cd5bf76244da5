// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gapprune/matrix.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/rope.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

// Pre-norm transformer block shared by the encoder (bidirectional, no
// rotation) and the decoder (causal, rotary). One forward implementation
// serves training and inference, so both see the same numbers.

// Rows of x are `sequences` back-to-back sequences of `length` tokens.
struct AttentionLayout {
    std::size_t sequences = 1;
    std::size_t length = 0;
    std::span<const std::int64_t> ids;  // one per row; empty disables rotation
    bool causal = false;
};

struct DropoutSpec {
    double p = 0.0;
    Rng* rng = nullptr;
    bool active() const noexcept { return p > 0.0 && rng != nullptr; }
};

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> rstd;
};

struct BlockCache {
    Matrix x;
    LayerNormCache ln1;
    Matrix a1;
    Matrix q, k, v;  // q and k after rotation
    // Indexed [sequence * num_heads + head].
    std::vector<Matrix> logits;  // scaled q k^T before masking
    std::vector<Matrix> probs;   // after masking and softmax
    std::vector<Matrix> keep;    // dropout multipliers; empty when inactive
    Matrix attn;
    Matrix mid;
    LayerNormCache ln2;
    Matrix a2;
    Matrix pre;
    Matrix hidden;
};

Matrix layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias,
                          LayerNormCache* cache);
// Returns dx; accumulates into dgain and dbias.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gain,
                           Matrix& dgain, Matrix& dbias);

double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;

// x W + b (b may be empty).
Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b);
void add_bias(Matrix& x, const Matrix& b);
// Accumulates column sums of dy into db.
void accumulate_bias_grad(const Matrix& dy, Matrix& db);

Matrix block_forward(const BlockWeights& w, const Matrix& x, const AttentionLayout& layout,
                     const RopeConfig& rope, BlockCache* cache = nullptr,
                     const DropoutSpec& dropout = {});

// Backpropagates dy through the block whose forward filled `cache`; weight
// gradients accumulate into grads. extra_dq / extra_dk carry gradients of a
// loss that reads the unrotated q / k projections directly.
Matrix block_backward(const BlockWeights& w, const BlockCache& cache, const Matrix& dy,
                      const AttentionLayout& layout, const RopeConfig& rope, BlockWeights& grads,
                      const Matrix* extra_dq = nullptr, const Matrix* extra_dk = nullptr);

}  // namespace gapprune

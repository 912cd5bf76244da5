// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "gapprune/weights.hpp"

namespace gapprune {

// Little-endian binary layout:
//
//   char[4]  magic "GAPW"
//   u32      version (1)
//   i32 x 10 grid_size, num_colors, d_model, num_heads, head_dim,
//            encoder_layers, decoder_layers, vocab_size, max_seq_len, mlp_ratio
//   f64 x 3  theta_base, embed_std, init_std
//   u32      tensor count
//   per tensor, in ModelWeights::visit order:
//     u32 name length, name bytes (no terminator)
//     u32 rank (always 2), u64 rows, u64 cols
//     f64 x rows*cols, row-major
inline constexpr unsigned kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ModelWeights weights;
};

void save_checkpoint(const std::string& path, const ModelWeights& weights, const ModelConfig& cfg);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gapprune/dataset.hpp"
#include "gapprune/evaluate.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

// Matrix-product FLOPs of one decoder prefill over n tokens, per layer
// 8nd^2 (q, k, v, o) + 4n^2d (scores and weighted sum) + 2*mlp_ratio*2nd^2
// (MLP), summed over decoder layers. LayerNorm, softmax, RoPE and the output
// head are not counted.
std::uint64_t estimate_flops(const ModelConfig& cfg, std::size_t seq_len);

// Decoder prefill length for a setting: BOS + retained visual tokens + text.
std::size_t prefill_length(const ModelConfig& cfg, const EvalSetting& setting, std::size_t text_len);

// FLOPs recorded by the product kernels during one prefill() call.
std::uint64_t instrumented_prefill_flops(const ModelWeights& w, const ModelConfig& cfg,
                                         const RecExample& ex, const EvalSetting& setting);

struct TtftOptions {
    std::size_t warmup = 3;
    std::size_t runs = 50;
    std::size_t sample = 16;  // examples per run
    std::uint64_t seed = 0;
};

struct TtftResult {
    EvalSetting setting;
    double mean_ms = 0.0;    // mean per-prompt latency over runs
    double stddev_ms = 0.0;  // across per-run means
    double cv = 0.0;
    std::size_t runs = 0;
};

// Time from prompt submission (raw image and text) to the first greedy token:
// encode, score, select, prefill, argmax. Batch size 1, single thread. Settings
// are interleaved round-robin inside every run so drift affects all equally.
std::vector<TtftResult> measure_ttft(const ModelWeights& w, const ModelConfig& cfg,
                                     const std::vector<RecExample>& examples,
                                     const std::vector<EvalSetting>& settings,
                                     const TtftOptions& options);

}  // namespace gapprune

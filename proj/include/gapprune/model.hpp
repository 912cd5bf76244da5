// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gapprune/block.hpp"
#include "gapprune/matrix.hpp"
#include "gapprune/pruning.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/rope.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

// G x G colour ids, row-major. Colour 0 is background.
using Image = std::vector<int>;

// The decoder sequence is [BOS, visual prefix, text, generated]. BOS sits at
// position 0 and the visual prefix starts at kVisualBase.
inline constexpr std::int64_t kVisualBase = 1;

struct EncoderOutput {
    Matrix features;                // N x d final-normed cell features (pre-projector)
    Matrix visual_tokens;           // N x d projected decoder prefix
    std::vector<double> cls_query;  // final-layer CLS query, d_model wide
    Matrix cls_keys;                // final-layer keys of the N cells
    std::vector<Matrix> trace;      // encoder_layers + 1 matrices of N + 1 rows
};

void validate_image(const Image& image, const ModelConfig& cfg);

EncoderOutput encode_image(const Image& image, const ModelWeights& w, const ModelConfig& cfg);

// Final-normed cell features for a batch, (B*N) x d. position_order, when not
// empty, holds one permutation of [0, N) per image: cell i then receives the
// positional embedding of cell position_order[b][i].
Matrix encode_features(std::span<const Image> images,
                       std::span<const std::vector<std::size_t>> position_order,
                       const ModelWeights& w, const ModelConfig& cfg);

Matrix project_visual(const Matrix& features, const ModelWeights& w);

struct KVCache {
    struct Layer {
        Matrix keys;  // rotated
        Matrix values;
        PositionIds ids;
    };
    std::vector<Layer> layers;

    std::size_t length() const noexcept { return layers.empty() ? 0 : layers.front().ids.size(); }
    std::int64_t max_id() const;
};

struct PrefillResult {
    std::vector<double> logits;  // next-token logits at the last position
    KVCache cache;
    // First decoder layer, one T x T matrix per head: scaled q k^T before the
    // causal mask. Row/column 0 is BOS.
    std::vector<Matrix> first_layer_logits;
};

PrefillResult prefill(const Matrix& visual_tokens, const PositionIds& visual_ids,
                      std::span<const int> text_tokens, const PositionIds& text_ids,
                      const ModelWeights& w, const ModelConfig& cfg);

// Appends one token at position next_id and returns the logits that follow it.
std::vector<double> decode_step(int token, KVCache& cache, std::int64_t next_id,
                                const ModelWeights& w, const ModelConfig& cfg);

struct PromptState {
    PrefillResult prefill;
    PruneSelection selection;
    PositionIds visual_ids;  // in decoder order
    PositionIds text_ids;
    IndexList visual_order;  // original cell index of each prefix row
    std::int64_t next_id = 0;
};

// Greedy decoding; stops at EOS (not returned) or after max_new tokens.
// Generated ids continue from 1 + the largest prompt id.
std::vector<int> generate_greedy(PromptState& state, std::size_t max_new, const ModelWeights& w,
                                 const ModelConfig& cfg);

// Pruning scores for the text_visual strategy: the first decoder layer's
// queries for the text tokens against its keys for the visual prefix, all
// heads together (d_k = d_model), no rotation.
ScoreVector text_visual_scores(const Matrix& visual_tokens, std::span<const int> text_tokens,
                               const ModelWeights& w, const ModelConfig& cfg);

// encode -> score -> select -> gather -> position ids -> prefill.
// strategy none keeps everything with sequential ids. gap keeps original ids
// for visual and text tokens; shifted and permuted compact both. permuted
// additionally orders the survivors by descending score. `encoded` may carry
// a cached encode_image result for this image.
PromptState prefill_with_pruning(const Image& image, std::span<const int> text_tokens,
                                 Strategy strategy, double ratio, Alignment alignment, Rng& rng,
                                 const ModelWeights& w, const ModelConfig& cfg,
                                 const EncoderOutput* encoded = nullptr);

// Misalignment with nothing removed: every visual token keeps its sequential
// id but the text starts `displacement` positions later, as if the prefix had
// been compacted by that many tokens relative to the text.
PromptState prefill_shifted_full(const Image& image, std::span<const int> text_tokens,
                                 std::int64_t displacement, const ModelWeights& w,
                                 const ModelConfig& cfg, const EncoderOutput* encoded = nullptr);

// ---------------------------------------------------------------------------
// Training objectives. Each returns the mean loss over the batch and, when
// grads is non-null, accumulates its gradient.

// Colour-presence BCE on the CLS output plus objectness_weight times
// -log(sum of final-layer CLS scores over non-background cells).
double encoder_pretrain_loss(const ModelWeights& w, const ModelConfig& cfg,
                             std::span<const Image> images, double objectness_weight,
                             ModelWeights* grads);

struct DecoderExample {
    Matrix features;  // N x d from encode_features (frozen encoder)
    int query_color = 0;
    int answer_cell = 0;
};

// Teacher-forced [BOS, prefix, query, answer] with sequential ids; cross
// entropy for the answer cell after the query and for EOS after the answer.
double decoder_loss(const ModelWeights& w, const ModelConfig& cfg,
                    std::span<const DecoderExample> batch, const DropoutSpec& dropout,
                    ModelWeights* grads);

}  // namespace gapprune

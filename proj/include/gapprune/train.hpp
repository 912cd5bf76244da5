// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "gapprune/dataset.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

// Two stages. The encoder is pretrained on colour presence with an
// objectness term on its final-layer CLS attention; then it is frozen and
// the projector plus decoder learn the grounding task on unpruned prompts.
struct TrainOptions {
    int batch_size = 32;

    int encoder_steps = 400;
    double encoder_lr = 3e-3;
    double objectness_weight = 1.0;

    int decoder_steps = 4000;
    double decoder_lr = 3e-3;
    int warmup_steps = 200;
    double attention_dropout = 0.4;
    // Give each training image a random assignment of encoder positional
    // embeddings so the decoder has to read location from rotary ids.
    bool shuffle_encoder_positions = true;

    int log_every = 250;

    void validate() const;
};

struct TrainReport {
    std::vector<double> encoder_losses;  // sampled every log_every steps
    std::vector<double> decoder_losses;
    double initial_decoder_loss = 0.0;   // mean over the first log window
    double final_decoder_loss = 0.0;     // mean over the last log window
    double train_accuracy = 0.0;         // unpruned, on up to 1000 training examples
    double val_accuracy = 0.0;           // unpruned
    double seconds = 0.0;
};

struct AdamState {
    ModelWeights m;
    ModelWeights v;
    long step = 0;
};

// One Adam update (beta 0.9/0.999, eps 1e-8) of the tensors whose names
// start with prefix.
void adam_update(ModelWeights& w, const ModelWeights& grads, AdamState& state, double lr,
                 const std::string& prefix);

// Linear warmup then cosine decay to zero.
double learning_rate(int step, int total_steps, int warmup_steps, double base_lr);

using TrainLog = std::function<void(const std::string&)>;

// Deterministic given rng's seed. Throws DivergenceError on a non-finite loss.
ModelWeights train_model(const std::vector<RecExample>& train, const std::vector<RecExample>& val,
                         const ModelConfig& cfg, const TrainOptions& options, Rng& rng,
                         TrainReport* report = nullptr, const TrainLog& log = {});

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "gapprune/matrix.hpp"
#include "gapprune/model.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

struct ProbeData {
    Matrix features;          // one row per (image, cell)
    std::vector<int> labels;  // cell position in [0, N)
};

// Cell rows of encoder trace entry `layer` (0 = embeddings plus positional
// embeddings, l = output of block l). Throws InputError if layer is out of range.
ProbeData collect_features(const std::vector<Image>& images, std::size_t layer, const ModelWeights& w,
                           const ModelConfig& cfg);

// Multinomial logistic regression on standardised features.
struct LinearProbe {
    Matrix weight;              // d x classes
    std::vector<double> bias;   // classes
    std::vector<double> mean;   // feature standardisation, from the training set
    std::vector<double> scale;  // 1 / std (1 for constant features)
    std::vector<double> loss_curve;  // training loss before each epoch, then the final loss

    std::vector<int> predict(const Matrix& features) const;
};

// Mean softmax cross-entropy of x * weight + bias. Writes the gradient when
// the output pointers are non-null.
double probe_loss(const Matrix& x, const std::vector<int>& labels, const Matrix& weight,
                  const std::vector<double>& bias, Matrix* grad_weight = nullptr,
                  std::vector<double>* grad_bias = nullptr);

// Full-batch gradient descent from a small Gaussian initialisation. Throws
// InputError when the labels hold fewer than two classes.
LinearProbe train_probe(const Matrix& features, const std::vector<int>& labels, std::size_t num_classes,
                        int epochs, double lr, Rng& rng);

double probe_accuracy(const LinearProbe& probe, const Matrix& features, const std::vector<int>& labels);

struct ProbeOptions {
    int epochs = 500;
    double lr = 0.1;
    double train_fraction = 0.8;
};

struct ProbeLayerResult {
    std::size_t layer = 0;
    double accuracy = 0.0;  // held-out top-1
    double train_accuracy = 0.0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool loss_non_increasing = false;  // within 1e-8 per epoch
    std::size_t train_samples = 0;
    std::size_t test_samples = 0;
};

struct ProbeReport {
    std::vector<ProbeLayerResult> layers;  // encoder_layers + 1 entries
};

// Splits the images (not the cells) into train and held-out sets with
// Rng(seed), then trains one independent probe per trace entry.
ProbeReport probe_all_layers(const std::vector<Image>& images, const ModelWeights& w,
                             const ModelConfig& cfg, const ProbeOptions& options, std::uint64_t seed);

nlohmann::ordered_json probe_report_to_json(const ProbeReport& report);

}  // namespace gapprune

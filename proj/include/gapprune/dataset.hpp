// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gapprune/model.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

// Find-the-colour task: a few objects with distinct colours sit on a
// background grid; the query names one colour and the answer is its cell.
struct RecExample {
    Image image;
    int query_color = 0;
    int answer_cell = 0;

    friend bool operator==(const RecExample&, const RecExample&) = default;
};

struct DatasetOptions {
    int min_objects = 1;
    int max_objects = 6;
};

// Object cells are drawn without replacement and the target uniformly among
// the objects, so every cell is equally likely to be the answer.
std::vector<RecExample> generate_dataset(std::size_t count, const ModelConfig& cfg, Rng& rng,
                                         const DatasetOptions& options = {});

// Throws InputError unless the query colour appears in exactly one cell and
// that cell is the answer.
void validate_example(const RecExample& ex, const ModelConfig& cfg);

// The text prompt fed to the decoder.
std::vector<int> prompt_tokens(const RecExample& ex);

// JSON lines: {"image":[...],"query_color":c,"answer_cell":i}
void write_dataset(const std::string& path, const std::vector<RecExample>& examples);
std::vector<RecExample> read_dataset(const std::string& path, const ModelConfig& cfg);

}  // namespace gapprune

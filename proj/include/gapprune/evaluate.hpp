// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "gapprune/dataset.hpp"
#include "gapprune/model.hpp"
#include "gapprune/pruning.hpp"

namespace gapprune {

struct EvalSetting {
    Strategy strategy = Strategy::none;
    double ratio = 1.0;
    Alignment alignment = Alignment::gap;
};

inline constexpr std::size_t kDefaultMaxNew = 2;

// Worker threads for `jobs` independent items: hardware concurrency, capped
// by the GAP_PRUNE_THREADS environment variable, never more than jobs.
std::size_t worker_count(std::size_t jobs);

// Runs fn(i) for i in [0, count) on worker_count(count) threads. Each index
// is handled exactly once; fn must only write to per-index state.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

std::vector<EncoderOutput> encode_dataset(const std::vector<RecExample>& examples,
                                          const ModelWeights& w, const ModelConfig& cfg);

// Random scores for example i come from Rng(seed).fork(i), so results do not
// depend on the number of threads.
PromptState prepare_prompt(const RecExample& ex, const EvalSetting& setting, Rng& rng,
                           const ModelWeights& w, const ModelConfig& cfg,
                           const EncoderOutput* encoded = nullptr);

bool answer_correct(const std::vector<int>& generated, const RecExample& ex, const ModelConfig& cfg);

// Fraction of examples whose first greedy token is the answer cell.
double evaluate(const ModelWeights& w, const ModelConfig& cfg, const std::vector<RecExample>& examples,
                const EvalSetting& setting, std::uint64_t seed,
                const std::vector<EncoderOutput>* encoded = nullptr);

// Same metric for the nothing-removed shifted misalignment.
double evaluate_shifted_full(const ModelWeights& w, const ModelConfig& cfg,
                             const std::vector<RecExample>& examples, std::int64_t displacement,
                             const std::vector<EncoderOutput>* encoded = nullptr);

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/evaluate.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "gapprune/errors.hpp"

namespace gapprune {

std::size_t worker_count(std::size_t jobs) {
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    if (const char* cap = std::getenv("GAP_PRUNE_THREADS"); cap != nullptr && *cap != '\0') {
        char* end = nullptr;
        const long value = std::strtol(cap, &end, 10);
        if (end == cap || *end != '\0' || value < 1) {
            throw ConfigError(std::string("GAP_PRUNE_THREADS must be a positive integer, got '") + cap +
                              "'");
        }
        workers = std::min(workers, static_cast<std::size_t>(value));
    }
    return std::max<std::size_t>(1, std::min(workers, jobs));
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = worker_count(count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        threads.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : threads) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

std::vector<EncoderOutput> encode_dataset(const std::vector<RecExample>& examples,
                                          const ModelWeights& w, const ModelConfig& cfg) {
    std::vector<EncoderOutput> out(examples.size());
    parallel_for(examples.size(), [&](std::size_t i) { out[i] = encode_image(examples[i].image, w, cfg); });
    return out;
}

PromptState prepare_prompt(const RecExample& ex, const EvalSetting& setting, Rng& rng,
                           const ModelWeights& w, const ModelConfig& cfg,
                           const EncoderOutput* encoded) {
    const std::vector<int> prompt = prompt_tokens(ex);
    return prefill_with_pruning(ex.image, prompt, setting.strategy, setting.ratio, setting.alignment,
                                rng, w, cfg, encoded);
}

bool answer_correct(const std::vector<int>& generated, const RecExample& ex, const ModelConfig& cfg) {
    return !generated.empty() && generated.front() == cfg.cell_token(ex.answer_cell);
}

double evaluate(const ModelWeights& w, const ModelConfig& cfg, const std::vector<RecExample>& examples,
                const EvalSetting& setting, std::uint64_t seed,
                const std::vector<EncoderOutput>* encoded) {
    if (examples.empty()) {
        throw InputError("evaluate: empty dataset");
    }
    if (encoded != nullptr && encoded->size() != examples.size()) {
        throw InputError("evaluate: encoder cache does not match the dataset");
    }
    std::vector<char> correct(examples.size(), 0);
    const Rng root(seed);
    parallel_for(examples.size(), [&](std::size_t i) {
        Rng rng = root.fork(i);
        PromptState st = prepare_prompt(examples[i], setting, rng, w, cfg,
                                        encoded != nullptr ? &(*encoded)[i] : nullptr);
        correct[i] = answer_correct(generate_greedy(st, kDefaultMaxNew, w, cfg), examples[i], cfg);
    });
    const auto hits = std::count(correct.begin(), correct.end(), 1);
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

double evaluate_shifted_full(const ModelWeights& w, const ModelConfig& cfg,
                             const std::vector<RecExample>& examples, std::int64_t displacement,
                             const std::vector<EncoderOutput>* encoded) {
    if (examples.empty()) {
        throw InputError("evaluate: empty dataset");
    }
    std::vector<char> correct(examples.size(), 0);
    parallel_for(examples.size(), [&](std::size_t i) {
        const std::vector<int> prompt = prompt_tokens(examples[i]);
        PromptState st = prefill_shifted_full(examples[i].image, prompt, displacement, w, cfg,
                                              encoded != nullptr ? &(*encoded)[i] : nullptr);
        correct[i] = answer_correct(generate_greedy(st, kDefaultMaxNew, w, cfg), examples[i], cfg);
    });
    const auto hits = std::count(correct.begin(), correct.end(), 1);
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

}  // namespace gapprune

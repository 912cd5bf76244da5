// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/efficiency.hpp"

#include <chrono>
#include <cmath>

#include "gapprune/errors.hpp"
#include "gapprune/matrix.hpp"
#include "gapprune/model.hpp"

namespace gapprune {

std::uint64_t estimate_flops(const ModelConfig& cfg, std::size_t seq_len) {
    if (seq_len == 0) {
        throw InputError("estimate_flops: seq_len must be at least 1");
    }
    const std::uint64_t n = seq_len;
    const std::uint64_t d = static_cast<std::uint64_t>(cfg.d_model);
    const std::uint64_t mlp = 4ULL * static_cast<std::uint64_t>(cfg.mlp_ratio) * n * d * d;
    const std::uint64_t per_layer = 8ULL * n * d * d + 4ULL * n * n * d + mlp;
    return per_layer * static_cast<std::uint64_t>(cfg.decoder_layers);
}

std::size_t prefill_length(const ModelConfig& cfg, const EvalSetting& setting, std::size_t text_len) {
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    std::size_t kept = n;
    if (setting.strategy == Strategy::spatial) {
        kept = select_spatial(n, setting.ratio).size();
    } else if (setting.strategy != Strategy::none) {
        kept = retained_count(n, setting.ratio);
    }
    return 1 + kept + text_len;
}

std::uint64_t instrumented_prefill_flops(const ModelWeights& w, const ModelConfig& cfg,
                                         const RecExample& ex, const EvalSetting& setting) {
    const EncoderOutput encoded = encode_image(ex.image, w, cfg);
    const std::vector<int> text = prompt_tokens(ex);
    Rng rng(0);
    // Selection happens outside the counter; only the prefill itself is traced.
    PromptState st = prefill_with_pruning(ex.image, text, setting.strategy, setting.ratio,
                                          setting.alignment, rng, w, cfg, &encoded);
    const Matrix tokens = gather(encoded.visual_tokens, st.visual_order);
    FlopCounter counter;
    prefill(tokens, st.visual_ids, text, st.text_ids, w, cfg);
    return counter.count();
}

std::vector<TtftResult> measure_ttft(const ModelWeights& w, const ModelConfig& cfg,
                                     const std::vector<RecExample>& examples,
                                     const std::vector<EvalSetting>& settings,
                                     const TtftOptions& options) {
    if (examples.empty() || settings.empty()) {
        throw InputError("measure_ttft: need at least one example and one setting");
    }
    if (options.runs == 0 || options.sample == 0) {
        throw ConfigError("measure_ttft: runs and sample must be positive");
    }
    const std::size_t sample = std::min(options.sample, examples.size());
    std::vector<std::vector<int>> texts(sample);
    for (std::size_t i = 0; i < sample; ++i) {
        texts[i] = prompt_tokens(examples[i]);
    }
    using clock = std::chrono::steady_clock;
    volatile std::size_t sink = 0;

    auto time_setting = [&](const EvalSetting& s, Rng& rng) {
        const auto start = clock::now();
        for (std::size_t i = 0; i < sample; ++i) {
            PromptState st = prefill_with_pruning(examples[i].image, texts[i], s.strategy, s.ratio,
                                                  s.alignment, rng, w, cfg);
            sink = sink + argmax(st.prefill.logits);
        }
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
        return ms / static_cast<double>(sample);
    };

    Rng rng(options.seed);
    for (std::size_t r = 0; r < options.warmup; ++r) {
        for (const auto& s : settings) {
            time_setting(s, rng);
        }
    }
    std::vector<std::vector<double>> per_run(settings.size());
    for (std::size_t r = 0; r < options.runs; ++r) {
        // Rotate the starting setting so none is systematically first.
        for (std::size_t j = 0; j < settings.size(); ++j) {
            const std::size_t idx = (r + j) % settings.size();
            per_run[idx].push_back(time_setting(settings[idx], rng));
        }
    }

    std::vector<TtftResult> out;
    for (std::size_t j = 0; j < settings.size(); ++j) {
        TtftResult res;
        res.setting = settings[j];
        res.runs = per_run[j].size();
        double sum = 0.0;
        for (double v : per_run[j]) {
            sum += v;
        }
        res.mean_ms = sum / static_cast<double>(res.runs);
        double var = 0.0;
        for (double v : per_run[j]) {
            var += (v - res.mean_ms) * (v - res.mean_ms);
        }
        res.stddev_ms = res.runs > 1 ? std::sqrt(var / static_cast<double>(res.runs - 1)) : 0.0;
        res.cv = res.mean_ms > 0.0 ? res.stddev_ms / res.mean_ms : 0.0;
        out.push_back(res);
    }
    return out;
}

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gapprune/errors.hpp"
#include "gapprune/evaluate.hpp"
#include "gapprune/model.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gapprune {

namespace {

// Training allocates and frees the same large activations every step. Keep
// them on the heap instead of round-tripping through mmap.
void keep_activations_on_heap() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::vector<Matrix*> tensors(ModelWeights& w, const std::string& prefix) {
    std::vector<Matrix*> out;
    w.visit([&](const std::string& name, Matrix& m) {
        if (name.rfind(prefix, 0) == 0) {
            out.push_back(&m);
        }
    });
    return out;
}

double window_mean(const std::vector<double>& values, std::size_t first, std::size_t last) {
    if (first >= last) {
        return 0.0;
    }
    return std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(first),
                           values.begin() + static_cast<std::ptrdiff_t>(last), 0.0) /
           static_cast<double>(last - first);
}

}  // namespace

void TrainOptions::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw ConfigError(std::string("train options: ") + what);
        }
    };
    require(batch_size >= 1, "batch_size must be positive");
    require(encoder_steps >= 0 && decoder_steps >= 1, "step counts must be non-negative");
    require(encoder_lr > 0.0 && decoder_lr > 0.0, "learning rates must be positive");
    require(warmup_steps >= 0, "warmup_steps must be non-negative");
    require(attention_dropout >= 0.0 && attention_dropout < 1.0, "attention_dropout must lie in [0, 1)");
    require(objectness_weight >= 0.0, "objectness_weight must be non-negative");
    require(log_every >= 1, "log_every must be positive");
}

void adam_update(ModelWeights& w, const ModelWeights& grads, AdamState& state, double lr,
                 const std::string& prefix) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    ++state.step;
    const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    auto params = tensors(w, prefix);
    auto g = tensors(const_cast<ModelWeights&>(grads), prefix);
    auto m = tensors(state.m, prefix);
    auto v = tensors(state.v, prefix);
    for (std::size_t t = 0; t < params.size(); ++t) {
        double* p = params[t]->data();
        const double* gt = g[t]->data();
        double* mt = m[t]->data();
        double* vt = v[t]->data();
        for (std::size_t i = 0; i < params[t]->size(); ++i) {
            mt[i] = kBeta1 * mt[i] + (1.0 - kBeta1) * gt[i];
            vt[i] = kBeta2 * vt[i] + (1.0 - kBeta2) * gt[i] * gt[i];
            const double mhat = mt[i] / correction1;
            const double vhat = vt[i] / correction2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
        }
    }
}

double learning_rate(int step, int total_steps, int warmup_steps, double base_lr) {
    const double warm = warmup_steps > 0 ? std::min(1.0, (step + 1.0) / warmup_steps) : 1.0;
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * step / std::max(1, total_steps)));
    return base_lr * warm * cosine;
}

ModelWeights train_model(const std::vector<RecExample>& train, const std::vector<RecExample>& val,
                         const ModelConfig& cfg, const TrainOptions& options, Rng& rng,
                         TrainReport* report, const TrainLog& log) {
    cfg.validate();
    options.validate();
    if (train.empty()) {
        throw InputError("train_model: empty training set");
    }
    keep_activations_on_heap();
    const auto started = std::chrono::steady_clock::now();
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const std::size_t B = static_cast<std::size_t>(options.batch_size);

    Rng init_rng = rng.fork(0);
    Rng batch_rng = rng.fork(1);
    Rng shuffle_rng = rng.fork(2);
    Rng dropout_rng = rng.fork(3);
    ModelWeights w = init_weights(cfg, init_rng);
    TrainReport local_report;
    TrainReport& rep = report != nullptr ? *report : local_report;

    auto emit = [&](const std::string& line) {
        if (log) {
            log(line);
        }
    };
    auto diverged = [&](const char* stage, int step) {
        std::ostringstream msg;
        msg << stage << " loss became non-finite at step " << step
            << "; lower the learning rate or check the data";
        throw DivergenceError(msg.str());
    };

    // Stage 1: encoder.
    {
        AdamState adam{w.zeros_like(), w.zeros_like(), 0};
        std::vector<Image> images(B);
        for (int step = 0; step < options.encoder_steps; ++step) {
            for (auto& img : images) {
                img = train[batch_rng.below(train.size())].image;
            }
            ModelWeights grads = w.zeros_like();
            const double loss = encoder_pretrain_loss(w, cfg, images, options.objectness_weight, &grads);
            if (!std::isfinite(loss)) {
                diverged("encoder", step);
            }
            const double lr =
                learning_rate(step, options.encoder_steps, options.warmup_steps, options.encoder_lr);
            adam_update(w, grads, adam, lr, "enc.");
            if (step % options.log_every == 0 || step + 1 == options.encoder_steps) {
                rep.encoder_losses.push_back(loss);
                emit("encoder step " + std::to_string(step) + " loss " + std::to_string(loss));
            }
        }
    }

    // Stage 2: projector and decoder on frozen encoder features.
    {
        AdamState adam{w.zeros_like(), w.zeros_like(), 0};
        std::vector<Image> images(B);
        std::vector<std::vector<std::size_t>> orders(B, std::vector<std::size_t>(n));
        std::vector<DecoderExample> batch(B);
        std::vector<double> losses;
        losses.reserve(static_cast<std::size_t>(options.decoder_steps));
        const DropoutSpec dropout{options.attention_dropout, &dropout_rng};
        for (int step = 0; step < options.decoder_steps; ++step) {
            for (std::size_t b = 0; b < B; ++b) {
                const RecExample& ex = train[batch_rng.below(train.size())];
                images[b] = ex.image;
                batch[b].query_color = ex.query_color;
                batch[b].answer_cell = ex.answer_cell;
                std::iota(orders[b].begin(), orders[b].end(), std::size_t{0});
                if (options.shuffle_encoder_positions) {
                    shuffle_rng.shuffle(orders[b]);
                }
            }
            const Matrix features = encode_features(images, orders, w, cfg);
            for (std::size_t b = 0; b < B; ++b) {
                batch[b].features = Matrix(n, features.cols());
                std::copy_n(features.row(b * n).data(), n * features.cols(), batch[b].features.data());
            }
            ModelWeights grads = w.zeros_like();
            const double loss = decoder_loss(w, cfg, batch, dropout, &grads);
            if (!std::isfinite(loss)) {
                diverged("decoder", step);
            }
            losses.push_back(loss);
            const double lr =
                learning_rate(step, options.decoder_steps, options.warmup_steps, options.decoder_lr);
            adam_update(w, grads, adam, lr, "dec.");
            if (step % options.log_every == 0 || step + 1 == options.decoder_steps) {
                const std::size_t from = losses.size() > static_cast<std::size_t>(options.log_every)
                                             ? losses.size() - static_cast<std::size_t>(options.log_every)
                                             : 0;
                const double recent = window_mean(losses, from, losses.size());
                rep.decoder_losses.push_back(recent);
                emit("decoder step " + std::to_string(step) + " loss " + std::to_string(recent));
            }
        }
        const std::size_t window = std::min<std::size_t>(losses.size(), static_cast<std::size_t>(options.log_every));
        rep.initial_decoder_loss = window_mean(losses, 0, window);
        rep.final_decoder_loss = window_mean(losses, losses.size() - window, losses.size());
    }

    if (!w.all_finite()) {
        throw DivergenceError("training produced non-finite weights");
    }
    const std::vector<RecExample> train_probe(train.begin(),
                                              train.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(train.size(), 1000)));
    rep.train_accuracy = evaluate(w, cfg, train_probe, EvalSetting{}, 0);
    rep.val_accuracy = val.empty() ? 0.0 : evaluate(w, cfg, val, EvalSetting{}, 0);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    emit("train accuracy " + std::to_string(rep.train_accuracy) + " val accuracy " +
         std::to_string(rep.val_accuracy));
    return w;
}

}  // namespace gapprune

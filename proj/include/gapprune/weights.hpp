// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gapprune/matrix.hpp"
#include "gapprune/rng.hpp"
#include "gapprune/rope.hpp"

namespace gapprune {

// Vocabulary layout: colours [0, C), answer cells [C, C + N), then BOS and EOS.
struct ModelConfig {
    int grid_size = 4;
    int num_colors = 8;
    int d_model = 64;
    int num_heads = 8;
    int head_dim = 8;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int vocab_size = 26;
    int max_seq_len = 64;
    int mlp_ratio = 4;
    double theta_base = 10000.0;
    // Embedding tables start at unit scale; projections at init_std.
    double embed_std = 1.0;
    double init_std = 0.02;

    int num_visual() const noexcept { return grid_size * grid_size; }
    int cell_token(int cell) const noexcept { return num_colors + cell; }
    int bos_token() const noexcept { return num_colors + num_visual(); }
    int eos_token() const noexcept { return num_colors + num_visual() + 1; }
    int min_vocab() const noexcept { return num_colors + num_visual() + 2; }
    bool is_cell_token(int token) const noexcept {
        return token >= num_colors && token < num_colors + num_visual();
    }
    RopeConfig rope() const noexcept { return RopeConfig{head_dim, theta_base, num_heads}; }

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Row vectors (gains, biases) are stored as 1 x n matrices. Linear layers map
// x -> x W (+ b) with W of shape in x out.
struct BlockWeights {
    Matrix ln1_gain, ln1_bias;
    Matrix wq, wk, wv, wo;
    Matrix ln2_gain, ln2_bias;
    Matrix w1, b1, w2, b2;

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + "ln1.gain", ln1_gain);
        f(prefix + "ln1.bias", ln1_bias);
        f(prefix + "attn.wq", wq);
        f(prefix + "attn.wk", wk);
        f(prefix + "attn.wv", wv);
        f(prefix + "attn.wo", wo);
        f(prefix + "ln2.gain", ln2_gain);
        f(prefix + "ln2.bias", ln2_bias);
        f(prefix + "mlp.w1", w1);
        f(prefix + "mlp.b1", b1);
        f(prefix + "mlp.w2", w2);
        f(prefix + "mlp.b2", b2);
    }
};

struct ModelWeights {
    // Vision encoder. pos_embed row 0 belongs to CLS, row 1 + i to cell i.
    Matrix color_embed, pos_embed, cls_embed;
    std::vector<BlockWeights> encoder;
    Matrix enc_ln_gain, enc_ln_bias;
    // Colour-presence head on the CLS output, used only to pretrain the encoder.
    Matrix presence_w, presence_b;

    // Projector and language decoder.
    Matrix proj_w, proj_b;
    Matrix token_embed;
    std::vector<BlockWeights> decoder;
    Matrix dec_ln_gain, dec_ln_bias;
    Matrix head_w;

    // Visits every tensor in a fixed order with its canonical name.
    template <typename F>
    void visit(F&& f) {
        f(std::string("enc.color_embed"), color_embed);
        f(std::string("enc.pos_embed"), pos_embed);
        f(std::string("enc.cls_embed"), cls_embed);
        for (std::size_t l = 0; l < encoder.size(); ++l) {
            encoder[l].visit("enc.block" + std::to_string(l) + ".", f);
        }
        f(std::string("enc.ln.gain"), enc_ln_gain);
        f(std::string("enc.ln.bias"), enc_ln_bias);
        f(std::string("enc.presence.w"), presence_w);
        f(std::string("enc.presence.b"), presence_b);
        f(std::string("dec.proj.w"), proj_w);
        f(std::string("dec.proj.b"), proj_b);
        f(std::string("dec.token_embed"), token_embed);
        for (std::size_t l = 0; l < decoder.size(); ++l) {
            decoder[l].visit("dec.block" + std::to_string(l) + ".", f);
        }
        f(std::string("dec.ln.gain"), dec_ln_gain);
        f(std::string("dec.ln.bias"), dec_ln_bias);
        f(std::string("dec.head.w"), head_w);
    }
    template <typename F>
    void visit(F&& f) const {
        const_cast<ModelWeights*>(this)->visit(
            [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
    }

    // Same shapes, all zeros.
    ModelWeights zeros_like() const;
    bool all_finite() const;
    std::size_t parameter_count() const;
};

// Seeded Gaussian initialisation; layer-norm gains start at 1, biases at 0.
ModelWeights init_weights(const ModelConfig& cfg, Rng& rng);

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/weights.hpp"

#include <string>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double std, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = std * rng.normal();
    }
    return m;
}

BlockWeights init_block(const ModelConfig& cfg, Rng& rng) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto hidden = d * static_cast<std::size_t>(cfg.mlp_ratio);
    BlockWeights b;
    b.ln1_gain = Matrix(1, d, 1.0);
    b.ln1_bias = Matrix(1, d);
    b.wq = gaussian(d, d, cfg.init_std, rng);
    b.wk = gaussian(d, d, cfg.init_std, rng);
    b.wv = gaussian(d, d, cfg.init_std, rng);
    b.wo = gaussian(d, d, cfg.init_std, rng);
    b.ln2_gain = Matrix(1, d, 1.0);
    b.ln2_bias = Matrix(1, d);
    b.w1 = gaussian(d, hidden, cfg.init_std, rng);
    b.b1 = Matrix(1, hidden);
    b.w2 = gaussian(hidden, d, cfg.init_std, rng);
    b.b2 = Matrix(1, d);
    return b;
}

}  // namespace

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ConfigError("model config: " + what);
        }
    };
    require(grid_size >= 1, "grid_size must be positive");
    require(num_colors >= 2, "num_colors must be at least 2");
    require(num_heads >= 1, "num_heads must be positive");
    require(d_model == num_heads * head_dim, "d_model must equal num_heads * head_dim");
    require(head_dim > 0 && head_dim % 2 == 0, "head_dim must be a positive even number");
    require(encoder_layers >= 1 && decoder_layers >= 1, "need at least one encoder and decoder layer");
    require(vocab_size >= min_vocab(),
            "vocab_size must be at least " + std::to_string(min_vocab()) + " (colours + cells + BOS/EOS)");
    // BOS, the visual prefix, the query and the generated answer plus EOS.
    require(max_seq_len >= num_visual() + 4, "max_seq_len too small for the visual prefix");
    require(mlp_ratio >= 1, "mlp_ratio must be positive");
    require(theta_base > 1.0, "theta_base must exceed 1");
    require(embed_std > 0.0 && init_std > 0.0, "initialisation scales must be positive");
}

ModelWeights init_weights(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto n = static_cast<std::size_t>(cfg.num_visual());
    const auto c = static_cast<std::size_t>(cfg.num_colors);
    const auto v = static_cast<std::size_t>(cfg.vocab_size);

    ModelWeights w;
    w.color_embed = gaussian(c, d, cfg.embed_std, rng);
    w.pos_embed = gaussian(n + 1, d, cfg.embed_std, rng);
    w.cls_embed = gaussian(1, d, cfg.embed_std, rng);
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        w.encoder.push_back(init_block(cfg, rng));
    }
    w.enc_ln_gain = Matrix(1, d, 1.0);
    w.enc_ln_bias = Matrix(1, d);
    w.presence_w = gaussian(d, c, cfg.init_std, rng);
    w.presence_b = Matrix(1, c);

    w.proj_w = gaussian(d, d, cfg.init_std, rng);
    w.proj_b = Matrix(1, d);
    w.token_embed = gaussian(v, d, cfg.embed_std, rng);
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        w.decoder.push_back(init_block(cfg, rng));
    }
    w.dec_ln_gain = Matrix(1, d, 1.0);
    w.dec_ln_bias = Matrix(1, d);
    w.head_w = gaussian(d, v, cfg.init_std, rng);
    return w;
}

ModelWeights ModelWeights::zeros_like() const {
    ModelWeights z = *this;
    z.visit([](const std::string&, Matrix& m) { m.fill(0.0); });
    return z;
}

bool ModelWeights::all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
    return ok;
}

std::size_t ModelWeights::parameter_count() const {
    std::size_t total = 0;
    visit([&](const std::string&, const Matrix& m) { total += m.size(); });
    return total;
}

}  // namespace gapprune

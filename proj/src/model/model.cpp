// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

void add_row(double* dst, std::span<const double> src) {
    for (std::size_t c = 0; c < src.size(); ++c) {
        dst[c] += src[c];
    }
}

void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst.data()[i] += src.data()[i];
    }
}

// [CLS, cells...] per image, one sequence of N + 1 rows each.
Matrix encoder_embed(std::span<const Image> images,
                     std::span<const std::vector<std::size_t>> position_order,
                     const ModelWeights& w, const ModelConfig& cfg) {
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    if (!position_order.empty() && position_order.size() != images.size()) {
        throw ShapeError("encode: one position order per image is required");
    }
    Matrix x(images.size() * (n + 1), d);
    for (std::size_t b = 0; b < images.size(); ++b) {
        validate_image(images[b], cfg);
        const std::size_t base = b * (n + 1);
        double* cls = x.row(base).data();
        add_row(cls, w.cls_embed.row(0));
        add_row(cls, w.pos_embed.row(0));
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t pos = i;
            if (!position_order.empty()) {
                pos = position_order[b].at(i);
                if (pos >= n) {
                    throw InputError("encode: position order entry out of range");
                }
            }
            double* row = x.row(base + 1 + i).data();
            add_row(row, w.color_embed.row(static_cast<std::size_t>(images[b][i])));
            add_row(row, w.pos_embed.row(1 + pos));
        }
    }
    return x;
}

AttentionLayout encoder_layout(std::size_t images, const ModelConfig& cfg) {
    return AttentionLayout{images, static_cast<std::size_t>(cfg.num_visual()) + 1, {}, false};
}

Matrix rows_of(const Matrix& m, std::size_t first, std::size_t count) {
    Matrix out(count, m.cols());
    std::copy_n(m.row(first).data(), count * m.cols(), out.data());
    return out;
}

void check_ids(const PositionIds& visual_ids, const PositionIds& text_ids, const ModelConfig& cfg) {
    std::int64_t previous = 0;  // BOS
    auto check = [&](std::int64_t id) {
        if (id <= previous) {
            throw InputError("position ids must be strictly increasing after BOS (got " +
                             std::to_string(id) + " after " + std::to_string(previous) + ")");
        }
        if (id >= cfg.max_seq_len) {
            throw InputError("position id " + std::to_string(id) + " exceeds max_seq_len");
        }
        previous = id;
    };
    for (auto id : visual_ids) {
        check(id);
    }
    for (auto id : text_ids) {
        check(id);
    }
}

void check_token(int token, const ModelConfig& cfg) {
    if (token < 0 || token >= cfg.vocab_size) {
        throw InputError("token " + std::to_string(token) + " outside the vocabulary");
    }
}

std::vector<double> head_logits(const Matrix& last, const ModelWeights& w) {
    const Matrix normed = layer_norm_forward(last, w.dec_ln_gain, w.dec_ln_bias, nullptr);
    const Matrix logits = matmul(normed, w.head_w);
    return logits.values();
}

// One decoder block for a single new token attending to the cache.
Matrix block_decode(const BlockWeights& w, const Matrix& x, KVCache::Layer& layer, std::int64_t id,
                    const RopeConfig& rope) {
    const std::size_t H = static_cast<std::size_t>(rope.num_heads);
    const std::size_t hd = static_cast<std::size_t>(rope.head_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::int64_t ids[1] = {id};

    const Matrix a1 = layer_norm_forward(x, w.ln1_gain, w.ln1_bias, nullptr);
    Matrix q = matmul(a1, w.wq);
    Matrix k = matmul(a1, w.wk);
    const Matrix v = matmul(a1, w.wv);
    apply_rope_heads(q, ids, rope);
    apply_rope_heads(k, ids, rope);
    layer.keys.append_row(k.row(0));
    layer.values.append_row(v.row(0));
    layer.ids.push_back(id);

    const std::size_t T = layer.ids.size();
    Matrix attn(1, x.cols());
    for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * hd;
        Matrix qh(1, hd);
        std::copy_n(q.row(0).data() + off, hd, qh.data());
        Matrix kh(T, hd);
        Matrix vh(T, hd);
        for (std::size_t j = 0; j < T; ++j) {
            std::copy_n(layer.keys.row(j).data() + off, hd, kh.row(j).data());
            std::copy_n(layer.values.row(j).data() + off, hd, vh.row(j).data());
        }
        Matrix probs = matmul_transposed(qh, kh);
        for (double& p : probs.values()) {
            p *= scale;
        }
        softmax_inplace(probs.row(0));
        const Matrix out = matmul(probs, vh);
        std::copy_n(out.data(), hd, attn.row(0).data() + off);
    }

    Matrix mid = matmul(attn, w.wo);
    add_into(mid, x);
    const Matrix a2 = layer_norm_forward(mid, w.ln2_gain, w.ln2_bias, nullptr);
    Matrix hidden = linear(a2, w.w1, w.b1);
    for (double& h : hidden.values()) {
        h = gelu(h);
    }
    Matrix y = linear(hidden, w.w2, w.b2);
    add_into(y, mid);
    return y;
}

double bce_with_logits(double z, double target) {
    return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void validate_image(const Image& image, const ModelConfig& cfg) {
    if (image.size() != static_cast<std::size_t>(cfg.num_visual())) {
        throw InputError("image must have " + std::to_string(cfg.num_visual()) + " cells, got " +
                         std::to_string(image.size()));
    }
    for (int c : image) {
        if (c < 0 || c >= cfg.num_colors) {
            throw InputError("image colour " + std::to_string(c) + " outside [0, " +
                             std::to_string(cfg.num_colors) + ")");
        }
    }
}

std::int64_t KVCache::max_id() const {
    if (layers.empty() || layers.front().ids.empty()) {
        return -1;
    }
    return *std::max_element(layers.front().ids.begin(), layers.front().ids.end());
}

EncoderOutput encode_image(const Image& image, const ModelWeights& w, const ModelConfig& cfg) {
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const RopeConfig rope = cfg.rope();
    const AttentionLayout layout = encoder_layout(1, cfg);

    EncoderOutput out;
    Matrix x = encoder_embed(std::span<const Image>(&image, 1), {}, w, cfg);
    out.trace.push_back(x);
    for (std::size_t l = 0; l < w.encoder.size(); ++l) {
        BlockCache cache;
        x = block_forward(w.encoder[l], x, layout, rope, &cache);
        if (l + 1 == w.encoder.size()) {
            const auto q = cache.q.row(0);
            out.cls_query.assign(q.begin(), q.end());
            out.cls_keys = rows_of(cache.k, 1, n);
        }
        out.trace.push_back(x);
    }
    const Matrix normed = layer_norm_forward(x, w.enc_ln_gain, w.enc_ln_bias, nullptr);
    out.features = rows_of(normed, 1, n);
    out.visual_tokens = project_visual(out.features, w);
    return out;
}

Matrix encode_features(std::span<const Image> images,
                       std::span<const std::vector<std::size_t>> position_order,
                       const ModelWeights& w, const ModelConfig& cfg) {
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const RopeConfig rope = cfg.rope();
    const AttentionLayout layout = encoder_layout(images.size(), cfg);
    Matrix x = encoder_embed(images, position_order, w, cfg);
    for (const auto& block : w.encoder) {
        x = block_forward(block, x, layout, rope);
    }
    const Matrix normed = layer_norm_forward(x, w.enc_ln_gain, w.enc_ln_bias, nullptr);
    Matrix out(images.size() * n, normed.cols());
    for (std::size_t b = 0; b < images.size(); ++b) {
        std::copy_n(normed.row(b * (n + 1) + 1).data(), n * normed.cols(), out.row(b * n).data());
    }
    return out;
}

Matrix project_visual(const Matrix& features, const ModelWeights& w) {
    return linear(features, w.proj_w, w.proj_b);
}

PrefillResult prefill(const Matrix& visual_tokens, const PositionIds& visual_ids,
                      std::span<const int> text_tokens, const PositionIds& text_ids,
                      const ModelWeights& w, const ModelConfig& cfg) {
    if (visual_tokens.rows() != visual_ids.size()) {
        throw InputError("prefill: " + std::to_string(visual_tokens.rows()) + " visual tokens but " +
                         std::to_string(visual_ids.size()) + " ids");
    }
    if (text_tokens.size() != text_ids.size()) {
        throw InputError("prefill: " + std::to_string(text_tokens.size()) + " text tokens but " +
                         std::to_string(text_ids.size()) + " ids");
    }
    if (visual_tokens.cols() != static_cast<std::size_t>(cfg.d_model)) {
        throw ShapeError("prefill: visual tokens must be d_model wide");
    }
    check_ids(visual_ids, text_ids, cfg);

    const std::size_t T = 1 + visual_ids.size() + text_ids.size();
    Matrix x(T, static_cast<std::size_t>(cfg.d_model));
    PositionIds ids;
    ids.reserve(T);
    ids.push_back(0);
    add_row(x.row(0).data(), w.token_embed.row(static_cast<std::size_t>(cfg.bos_token())));
    std::copy_n(visual_tokens.data(), visual_tokens.size(), x.row(1).data());
    ids.insert(ids.end(), visual_ids.begin(), visual_ids.end());
    for (std::size_t t = 0; t < text_tokens.size(); ++t) {
        check_token(text_tokens[t], cfg);
        add_row(x.row(1 + visual_ids.size() + t).data(),
                w.token_embed.row(static_cast<std::size_t>(text_tokens[t])));
    }
    ids.insert(ids.end(), text_ids.begin(), text_ids.end());

    const RopeConfig rope = cfg.rope();
    const AttentionLayout layout{1, T, ids, true};
    PrefillResult result;
    for (std::size_t l = 0; l < w.decoder.size(); ++l) {
        BlockCache cache;
        x = block_forward(w.decoder[l], x, layout, rope, &cache);
        result.cache.layers.push_back(KVCache::Layer{std::move(cache.k), std::move(cache.v), ids});
        if (l == 0) {
            result.first_layer_logits = std::move(cache.logits);
        }
    }
    result.logits = head_logits(rows_of(x, T - 1, 1), w);
    return result;
}

std::vector<double> decode_step(int token, KVCache& cache, std::int64_t next_id,
                                const ModelWeights& w, const ModelConfig& cfg) {
    check_token(token, cfg);
    if (cache.layers.size() != w.decoder.size()) {
        throw InputError("decode_step: cache does not match the decoder depth");
    }
    if (next_id <= cache.max_id()) {
        throw InputError("decode_step: next id " + std::to_string(next_id) +
                         " must exceed the largest cached id " + std::to_string(cache.max_id()));
    }
    if (next_id >= cfg.max_seq_len) {
        throw InputError("decode_step: id " + std::to_string(next_id) + " exceeds max_seq_len");
    }
    Matrix x = Matrix::row_vector(w.token_embed.row(static_cast<std::size_t>(token)));
    const RopeConfig rope = cfg.rope();
    for (std::size_t l = 0; l < w.decoder.size(); ++l) {
        x = block_decode(w.decoder[l], x, cache.layers[l], next_id, rope);
    }
    return head_logits(x, w);
}

std::vector<int> generate_greedy(PromptState& state, std::size_t max_new, const ModelWeights& w,
                                 const ModelConfig& cfg) {
    std::vector<int> out;
    std::vector<double> logits = state.prefill.logits;
    while (out.size() < max_new) {
        const int token = static_cast<int>(argmax(logits));
        if (token == cfg.eos_token()) {
            break;
        }
        out.push_back(token);
        if (out.size() == max_new || state.next_id >= cfg.max_seq_len) {
            break;
        }
        logits = decode_step(token, state.prefill.cache, state.next_id, w, cfg);
        ++state.next_id;
    }
    return out;
}

ScoreVector text_visual_scores(const Matrix& visual_tokens, std::span<const int> text_tokens,
                               const ModelWeights& w, const ModelConfig& cfg) {
    if (text_tokens.empty()) {
        throw InputError("text_visual scoring needs at least one text token");
    }
    const BlockWeights& first = w.decoder.front();
    Matrix text(text_tokens.size(), static_cast<std::size_t>(cfg.d_model));
    for (std::size_t t = 0; t < text_tokens.size(); ++t) {
        check_token(text_tokens[t], cfg);
        add_row(text.row(t).data(), w.token_embed.row(static_cast<std::size_t>(text_tokens[t])));
    }
    const Matrix queries =
        matmul(layer_norm_forward(text, first.ln1_gain, first.ln1_bias, nullptr), first.wq);
    const Matrix keys =
        matmul(layer_norm_forward(visual_tokens, first.ln1_gain, first.ln1_bias, nullptr), first.wk);
    return score_text_visual(queries, keys, static_cast<std::size_t>(cfg.d_model));
}

PromptState prefill_with_pruning(const Image& image, std::span<const int> text_tokens,
                                 Strategy strategy, double ratio, Alignment alignment, Rng& rng,
                                 const ModelWeights& w, const ModelConfig& cfg,
                                 const EncoderOutput* encoded) {
    EncoderOutput local;
    if (encoded == nullptr) {
        local = encode_image(image, w, cfg);
        encoded = &local;
    }
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);

    PromptState st;
    st.selection.strategy = strategy;
    st.selection.ratio = ratio;
    st.selection.alignment = alignment;

    ScoreVector scores;
    IndexList& indices = st.selection.indices;
    switch (strategy) {
        case Strategy::none:
            st.selection.ratio = 1.0;
            st.selection.alignment = Alignment::gap;
            indices.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                indices[i] = i;
            }
            break;
        case Strategy::cls_visual:
            scores = score_cls_visual(encoded->cls_query, encoded->cls_keys, d);
            indices = topk_select(scores, retained_count(n, ratio));
            break;
        case Strategy::text_visual:
            scores = text_visual_scores(encoded->visual_tokens, text_tokens, w, cfg);
            indices = topk_select(scores, retained_count(n, ratio));
            break;
        case Strategy::random:
            scores = score_random(n, rng);
            indices = topk_select(scores, retained_count(n, ratio));
            break;
        case Strategy::spatial:
            indices = select_spatial(n, ratio);
            break;
    }
    if (scores.empty()) {
        scores.assign(n, 1.0);
    }

    const auto k = static_cast<std::int64_t>(indices.size());
    const auto count = static_cast<std::int64_t>(text_tokens.size());
    switch (st.selection.alignment) {
        case Alignment::gap:
            st.visual_order = indices;
            st.visual_ids = align_gap(indices, kVisualBase);
            st.text_ids = sequential_ids(kVisualBase + static_cast<std::int64_t>(n), count);
            break;
        case Alignment::shifted:
            st.visual_order = indices;
            st.visual_ids = align_shifted(indices, kVisualBase);
            st.text_ids = sequential_ids(kVisualBase + k, count);
            break;
        case Alignment::permuted: {
            std::vector<double> kept(indices.size());
            for (std::size_t j = 0; j < indices.size(); ++j) {
                kept[j] = scores[indices[j]];
            }
            const IndexList order = descending_order(kept);
            for (std::size_t j : order) {
                st.visual_order.push_back(indices[j]);
            }
            st.visual_ids = sequential_ids(kVisualBase, k);
            st.text_ids = sequential_ids(kVisualBase + k, count);
            break;
        }
    }

    const Matrix tokens = gather(encoded->visual_tokens, st.visual_order);
    st.prefill = prefill(tokens, st.visual_ids, text_tokens, st.text_ids, w, cfg);
    st.next_id = 1 + std::max(st.visual_ids.empty() ? 0 : st.visual_ids.back(),
                              st.text_ids.empty() ? 0 : st.text_ids.back());
    return st;
}

PromptState prefill_shifted_full(const Image& image, std::span<const int> text_tokens,
                                 std::int64_t displacement, const ModelWeights& w,
                                 const ModelConfig& cfg, const EncoderOutput* encoded) {
    if (displacement < 0) {
        throw InputError("prefill_shifted_full: displacement must be non-negative");
    }
    EncoderOutput local;
    if (encoded == nullptr) {
        local = encode_image(image, w, cfg);
        encoded = &local;
    }
    const auto n = static_cast<std::int64_t>(cfg.num_visual());
    PromptState st;
    st.selection.strategy = Strategy::none;
    st.selection.alignment = Alignment::shifted;
    for (std::int64_t i = 0; i < n; ++i) {
        st.selection.indices.push_back(static_cast<std::size_t>(i));
    }
    st.visual_order = st.selection.indices;
    st.visual_ids = sequential_ids(kVisualBase, n);
    st.text_ids = sequential_ids(kVisualBase + n + displacement,
                                 static_cast<std::int64_t>(text_tokens.size()));
    st.prefill = prefill(encoded->visual_tokens, st.visual_ids, text_tokens, st.text_ids, w, cfg);
    st.next_id = 1 + (st.text_ids.empty() ? st.visual_ids.back() : st.text_ids.back());
    return st;
}

double encoder_pretrain_loss(const ModelWeights& w, const ModelConfig& cfg,
                             std::span<const Image> images, double objectness_weight,
                             ModelWeights* grads) {
    if (images.empty()) {
        throw InputError("encoder_pretrain_loss: empty batch");
    }
    const std::size_t B = images.size();
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t C = static_cast<std::size_t>(cfg.num_colors);
    const std::size_t L = w.encoder.size();
    const RopeConfig rope = cfg.rope();
    const AttentionLayout layout = encoder_layout(B, cfg);

    std::vector<BlockCache> caches(L);
    Matrix x = encoder_embed(images, {}, w, cfg);
    for (std::size_t l = 0; l < L; ++l) {
        x = block_forward(w.encoder[l], x, layout, rope, &caches[l]);
    }
    LayerNormCache ln;
    const Matrix normed = layer_norm_forward(x, w.enc_ln_gain, w.enc_ln_bias, &ln);

    Matrix cls(B, d);
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(normed.row(b * (n + 1)).data(), d, cls.row(b).data());
    }
    const Matrix z = linear(cls, w.presence_w, w.presence_b);
    Matrix dz(B, C);
    double bce = 0.0;
    const double bce_norm = 1.0 / static_cast<double>(B * C);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<bool> present(C, false);
        for (int c : images[b]) {
            present[static_cast<std::size_t>(c)] = true;
        }
        for (std::size_t c = 0; c < C; ++c) {
            const double t = present[c] ? 1.0 : 0.0;
            bce += bce_with_logits(z(b, c), t);
            dz(b, c) = (sigmoid(z(b, c)) - t) * bce_norm;
        }
    }
    bce *= bce_norm;

    const BlockCache& last = caches.back();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix extra_dq(B * (n + 1), d);
    Matrix extra_dk(B * (n + 1), d);
    double objectness = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = b * (n + 1);
        const Matrix keys = rows_of(last.k, base + 1, n);
        const ScoreVector s = score_cls_visual(last.q.row(base), keys, d);
        double mass = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (images[b][j] != 0) {
                mass += s[j];
            }
        }
        objectness -= std::log(mass);
        const double coeff = objectness_weight / static_cast<double>(B);
        for (std::size_t j = 0; j < n; ++j) {
            const double on = images[b][j] != 0 ? 1.0 : 0.0;
            const double dlogit = coeff * (s[j] - s[j] * on / mass) * scale;
            for (std::size_t e = 0; e < d; ++e) {
                extra_dq(base, e) += dlogit * last.k(base + 1 + j, e);
                extra_dk(base + 1 + j, e) += dlogit * last.q(base, e);
            }
        }
    }
    objectness /= static_cast<double>(B);
    const double loss = bce + objectness_weight * objectness;
    if (grads == nullptr) {
        return loss;
    }

    accumulate_transposed_product(cls, dz, grads->presence_w);
    accumulate_bias_grad(dz, grads->presence_b);
    const Matrix dcls = matmul_transposed(dz, w.presence_w);
    Matrix dnormed(B * (n + 1), d);
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(dcls.row(b).data(), d, dnormed.row(b * (n + 1)).data());
    }
    Matrix dx = layer_norm_backward(dnormed, ln, w.enc_ln_gain, grads->enc_ln_gain, grads->enc_ln_bias);
    for (std::size_t l = L; l-- > 0;) {
        const bool is_last = l + 1 == L;
        dx = block_backward(w.encoder[l], caches[l], dx, layout, rope, grads->encoder[l],
                            is_last ? &extra_dq : nullptr, is_last ? &extra_dk : nullptr);
    }
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = b * (n + 1);
        add_row(grads->cls_embed.row(0).data(), dx.row(base));
        add_row(grads->pos_embed.row(0).data(), dx.row(base));
        for (std::size_t i = 0; i < n; ++i) {
            add_row(grads->color_embed.row(static_cast<std::size_t>(images[b][i])).data(),
                    dx.row(base + 1 + i));
            add_row(grads->pos_embed.row(1 + i).data(), dx.row(base + 1 + i));
        }
    }
    return loss;
}

double decoder_loss(const ModelWeights& w, const ModelConfig& cfg,
                    std::span<const DecoderExample> batch, const DropoutSpec& dropout,
                    ModelWeights* grads) {
    if (batch.empty()) {
        throw InputError("decoder_loss: empty batch");
    }
    const std::size_t B = batch.size();
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t T = n + 3;
    const std::size_t L = w.decoder.size();
    const RopeConfig rope = cfg.rope();

    Matrix features(B * n, d);
    for (std::size_t b = 0; b < B; ++b) {
        if (batch[b].features.rows() != n || batch[b].features.cols() != d) {
            throw ShapeError("decoder_loss: features must be N x d_model");
        }
        std::copy_n(batch[b].features.data(), n * d, features.row(b * n).data());
    }
    const Matrix projected = project_visual(features, w);

    Matrix x(B * T, d);
    PositionIds ids(B * T);
    std::vector<int> targets(2 * B);
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = b * T;
        const DecoderExample& ex = batch[b];
        if (ex.query_color < 0 || ex.query_color >= cfg.num_colors || ex.answer_cell < 0 ||
            ex.answer_cell >= cfg.num_visual()) {
            throw InputError("decoder_loss: query colour or answer cell out of range");
        }
        add_row(x.row(base).data(), w.token_embed.row(static_cast<std::size_t>(cfg.bos_token())));
        std::copy_n(projected.row(b * n).data(), n * d, x.row(base + 1).data());
        add_row(x.row(base + n + 1).data(), w.token_embed.row(static_cast<std::size_t>(ex.query_color)));
        add_row(x.row(base + n + 2).data(),
                w.token_embed.row(static_cast<std::size_t>(cfg.cell_token(ex.answer_cell))));
        for (std::size_t t = 0; t < T; ++t) {
            ids[base + t] = static_cast<std::int64_t>(t);
        }
        targets[2 * b] = cfg.cell_token(ex.answer_cell);
        targets[2 * b + 1] = cfg.eos_token();
    }

    const AttentionLayout layout{B, T, ids, true};
    std::vector<BlockCache> caches(L);
    for (std::size_t l = 0; l < L; ++l) {
        x = block_forward(w.decoder[l], x, layout, rope, &caches[l], dropout);
    }

    Matrix picked(2 * B, d);
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(x.row(b * T + n + 1).data(), 2 * d, picked.row(2 * b).data());
    }
    LayerNormCache ln;
    const Matrix normed = layer_norm_forward(picked, w.dec_ln_gain, w.dec_ln_bias, &ln);
    Matrix logits = matmul(normed, w.head_w);

    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(B);
    for (std::size_t r = 0; r < 2 * B; ++r) {
        auto row = logits.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) {
            total += std::exp(v - peak);
        }
        const double log_z = peak + std::log(total);
        loss += log_z - row[static_cast<std::size_t>(targets[r])];
        for (std::size_t c = 0; c < V; ++c) {
            row[c] = std::exp(row[c] - log_z) * inv_b;
        }
        row[static_cast<std::size_t>(targets[r])] -= inv_b;
    }
    loss *= inv_b;
    if (!std::isfinite(loss)) {
        return loss;
    }
    if (grads == nullptr) {
        return loss;
    }

    const Matrix& dlogits = logits;
    accumulate_transposed_product(normed, dlogits, grads->head_w);
    const Matrix dnormed = matmul_transposed(dlogits, w.head_w);
    const Matrix dpicked = layer_norm_backward(dnormed, ln, w.dec_ln_gain, grads->dec_ln_gain,
                                               grads->dec_ln_bias);
    Matrix dx(B * T, d);
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(dpicked.row(2 * b).data(), 2 * d, dx.row(b * T + n + 1).data());
    }
    for (std::size_t l = L; l-- > 0;) {
        dx = block_backward(w.decoder[l], caches[l], dx, layout, rope, grads->decoder[l]);
    }

    Matrix dprojected(B * n, d);
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = b * T;
        const DecoderExample& ex = batch[b];
        add_row(grads->token_embed.row(static_cast<std::size_t>(cfg.bos_token())).data(), dx.row(base));
        std::copy_n(dx.row(base + 1).data(), n * d, dprojected.row(b * n).data());
        add_row(grads->token_embed.row(static_cast<std::size_t>(ex.query_color)).data(),
                dx.row(base + n + 1));
        add_row(grads->token_embed.row(static_cast<std::size_t>(cfg.cell_token(ex.answer_cell))).data(),
                dx.row(base + n + 2));
    }
    accumulate_transposed_product(features, dprojected, grads->proj_w);
    accumulate_bias_grad(dprojected, grads->proj_b);
    return loss;
}

}  // namespace gapprune

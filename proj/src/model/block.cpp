// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/block.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

void check_layout(const Matrix& x, const AttentionLayout& layout, const RopeConfig& rope) {
    if (layout.sequences * layout.length != x.rows()) {
        throw ShapeError("block: layout covers " + std::to_string(layout.sequences * layout.length) +
                         " rows, input has " + std::to_string(x.rows()));
    }
    if (!layout.ids.empty() && layout.ids.size() != x.rows()) {
        throw ShapeError("block: one position id per row is required");
    }
    if (x.cols() != static_cast<std::size_t>(rope.num_heads * rope.head_dim)) {
        throw ShapeError("block: width must equal num_heads * head_dim");
    }
}

void add_into(Matrix& dst, const Matrix& src) {
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        d[i] += s[i];
    }
}

Matrix head_slice(const Matrix& m, std::size_t base, std::size_t rows, std::size_t off,
                  std::size_t width) {
    Matrix out(rows, width);
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy_n(m.row(base + i).data() + off, width, out.row(i).data());
    }
    return out;
}

void add_head(Matrix& dst, const Matrix& src, std::size_t base, std::size_t off) {
    for (std::size_t i = 0; i < src.rows(); ++i) {
        double* d = dst.row(base + i).data() + off;
        const double* s = src.row(i).data();
        for (std::size_t e = 0; e < src.cols(); ++e) {
            d[e] += s[e];
        }
    }
}

}  // namespace

Matrix layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias,
                          LayerNormCache* cache) {
    if (gain.size() != x.cols() || bias.size() != x.cols()) {
        throw ShapeError("layer_norm: gain/bias length must equal the row width");
    }
    Matrix out(x.rows(), x.cols());
    if (cache != nullptr) {
        cache->xhat = Matrix(x.rows(), x.cols());
        cache->rstd.assign(x.rows(), 0.0);
    }
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) {
            mean += v;
        }
        mean /= n;
        double var = 0.0;
        for (double v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= n;
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double xhat = (in[c] - mean) * rstd;
            dst[c] = xhat * gain.data()[c] + bias.data()[c];
            if (cache != nullptr) {
                cache->xhat(r, c) = xhat;
            }
        }
        if (cache != nullptr) {
            cache->rstd[r] = rstd;
        }
    }
    return out;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gain,
                           Matrix& dgain, Matrix& dbias) {
    const std::size_t cols = dy.cols();
    const double n = static_cast<double>(cols);
    Matrix dx(dy.rows(), cols);
    std::vector<double> dxhat(cols);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double g = dy(r, c);
            const double xh = cache.xhat(r, c);
            dgain.data()[c] += g * xh;
            dbias.data()[c] += g;
            dxhat[c] = g * gain.data()[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh;
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for (std::size_t c = 0; c < cols; ++c) {
            dx(r, c) = cache.rstd[r] * (dxhat[c] - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat);
        }
    }
    return dx;
}

namespace {

// tanh through a single exp; glibc's exp is several times cheaper than its
// tanh and the absolute error stays at the 1e-16 level, which is what GELU
// sees.
inline double fast_tanh(double u) noexcept { return 1.0 - 2.0 / (1.0 + std::exp(2.0 * u)); }

}  // namespace

double gelu(double x) noexcept {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    return 0.5 * x * (1.0 + fast_tanh(u));
}

double gelu_derivative(double x) noexcept {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    const double t = fast_tanh(u);
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void add_bias(Matrix& x, const Matrix& b) {
    if (b.size() != x.cols()) {
        throw ShapeError("add_bias: bias length must equal the row width");
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double* row = x.row(r).data();
        for (std::size_t c = 0; c < x.cols(); ++c) {
            row[c] += b.data()[c];
        }
    }
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = matmul(x, w);
    if (!b.empty()) {
        add_bias(y, b);
    }
    return y;
}

void accumulate_bias_grad(const Matrix& dy, Matrix& db) {
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        const double* row = dy.row(r).data();
        for (std::size_t c = 0; c < dy.cols(); ++c) {
            db.data()[c] += row[c];
        }
    }
}

Matrix block_forward(const BlockWeights& w, const Matrix& x, const AttentionLayout& layout,
                     const RopeConfig& rope, BlockCache* cache, const DropoutSpec& dropout) {
    check_layout(x, layout, rope);
    const std::size_t T = layout.length;
    const std::size_t H = static_cast<std::size_t>(rope.num_heads);
    const std::size_t hd = static_cast<std::size_t>(rope.head_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    BlockCache local;
    BlockCache& c = cache != nullptr ? *cache : local;
    const bool keep_all = cache != nullptr;

    c.x = x;
    c.a1 = layer_norm_forward(x, w.ln1_gain, w.ln1_bias, keep_all ? &c.ln1 : nullptr);
    c.q = matmul(c.a1, w.wq);
    c.k = matmul(c.a1, w.wk);
    c.v = matmul(c.a1, w.wv);
    if (!layout.ids.empty()) {
        apply_rope_heads(c.q, layout.ids, rope);
        apply_rope_heads(c.k, layout.ids, rope);
    }

    c.attn = Matrix(x.rows(), x.cols());
    c.logits.assign(keep_all ? layout.sequences * H : 0, Matrix());
    c.probs.assign(keep_all ? layout.sequences * H : 0, Matrix());
    c.keep.assign(keep_all && dropout.active() ? layout.sequences * H : 0, Matrix());
    const double keep_scale = dropout.active() ? 1.0 / (1.0 - dropout.p) : 1.0;

    for (std::size_t s = 0; s < layout.sequences; ++s) {
        const std::size_t base = s * T;
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * hd;
            const Matrix qh = head_slice(c.q, base, T, off, hd);
            const Matrix kh = head_slice(c.k, base, T, off, hd);
            Matrix logits = matmul_transposed(qh, kh);
            for (double& v : logits.values()) {
                v *= scale;
            }

            Matrix probs = logits;
            for (std::size_t i = 0; i < T; ++i) {
                if (layout.causal) {
                    for (std::size_t j = i + 1; j < T; ++j) {
                        probs(i, j) = -std::numeric_limits<double>::infinity();
                    }
                }
                softmax_inplace(probs.row(i));
            }

            Matrix mixed = probs;
            if (dropout.active()) {
                Matrix keep(T, T);
                for (double& m : keep.values()) {
                    m = dropout.rng->uniform() >= dropout.p ? keep_scale : 0.0;
                }
                for (std::size_t i = 0; i < mixed.size(); ++i) {
                    mixed.data()[i] *= keep.data()[i];
                }
                if (keep_all) {
                    c.keep[s * H + h] = std::move(keep);
                }
            }

            add_head(c.attn, matmul(mixed, head_slice(c.v, base, T, off, hd)), base, off);

            if (keep_all) {
                c.logits[s * H + h] = std::move(logits);
                c.probs[s * H + h] = std::move(probs);
            }
        }
    }

    c.mid = matmul(c.attn, w.wo);
    add_into(c.mid, x);
    c.a2 = layer_norm_forward(c.mid, w.ln2_gain, w.ln2_bias, keep_all ? &c.ln2 : nullptr);
    c.pre = linear(c.a2, w.w1, w.b1);
    c.hidden = c.pre;
    for (double& v : c.hidden.values()) {
        v = gelu(v);
    }
    Matrix y = linear(c.hidden, w.w2, w.b2);
    add_into(y, c.mid);
    return y;
}

Matrix block_backward(const BlockWeights& w, const BlockCache& c, const Matrix& dy,
                      const AttentionLayout& layout, const RopeConfig& rope, BlockWeights& g,
                      const Matrix* extra_dq, const Matrix* extra_dk) {
    check_layout(dy, layout, rope);
    const std::size_t T = layout.length;
    const std::size_t H = static_cast<std::size_t>(rope.num_heads);
    const std::size_t hd = static_cast<std::size_t>(rope.head_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    // MLP branch.
    accumulate_bias_grad(dy, g.b2);
    accumulate_transposed_product(c.hidden, dy, g.w2);
    Matrix dpre = matmul_transposed(dy, w.w2);
    for (std::size_t i = 0; i < dpre.size(); ++i) {
        dpre.data()[i] *= gelu_derivative(c.pre.data()[i]);
    }
    accumulate_bias_grad(dpre, g.b1);
    accumulate_transposed_product(c.a2, dpre, g.w1);
    const Matrix da2 = matmul_transposed(dpre, w.w1);
    Matrix dmid = layer_norm_backward(da2, c.ln2, w.ln2_gain, g.ln2_gain, g.ln2_bias);
    add_into(dmid, dy);

    // Attention branch.
    accumulate_transposed_product(c.attn, dmid, g.wo);
    const Matrix dattn = matmul_transposed(dmid, w.wo);
    Matrix dq(dy.rows(), dy.cols());
    Matrix dk(dy.rows(), dy.cols());
    Matrix dv(dy.rows(), dy.cols());
    for (std::size_t s = 0; s < layout.sequences; ++s) {
        const std::size_t base = s * T;
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * hd;
            const Matrix& probs = c.probs[s * H + h];
            const Matrix* keep = c.keep.empty() ? nullptr : &c.keep[s * H + h];
            Matrix mixed = probs;
            if (keep != nullptr) {
                for (std::size_t i = 0; i < mixed.size(); ++i) {
                    mixed.data()[i] *= keep->data()[i];
                }
            }
            const Matrix doh = head_slice(dattn, base, T, off, hd);
            Matrix dmixed = matmul_transposed(doh, head_slice(c.v, base, T, off, hd));
            add_head(dv, matmul(mixed.transposed(), doh), base, off);
            if (keep != nullptr) {
                for (std::size_t i = 0; i < dmixed.size(); ++i) {
                    dmixed.data()[i] *= keep->data()[i];
                }
            }
            // Softmax backward, folded with the logit scale.
            Matrix dlogits(T, T);
            for (std::size_t i = 0; i < T; ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < T; ++j) {
                    inner += probs(i, j) * dmixed(i, j);
                }
                for (std::size_t j = 0; j < T; ++j) {
                    dlogits(i, j) = probs(i, j) * (dmixed(i, j) - inner) * scale;
                }
            }
            add_head(dq, matmul(dlogits, head_slice(c.k, base, T, off, hd)), base, off);
            add_head(dk, matmul(dlogits.transposed(), head_slice(c.q, base, T, off, hd)), base, off);
        }
    }
    if (!layout.ids.empty()) {
        apply_rope_heads(dq, layout.ids, rope, /*inverse=*/true);
        apply_rope_heads(dk, layout.ids, rope, /*inverse=*/true);
    }
    if (extra_dq != nullptr) {
        add_into(dq, *extra_dq);
    }
    if (extra_dk != nullptr) {
        add_into(dk, *extra_dk);
    }

    accumulate_transposed_product(c.a1, dq, g.wq);
    accumulate_transposed_product(c.a1, dk, g.wk);
    accumulate_transposed_product(c.a1, dv, g.wv);
    Matrix da1 = matmul_transposed(dq, w.wq);
    add_into(da1, matmul_transposed(dk, w.wk));
    add_into(da1, matmul_transposed(dv, w.wv));
    Matrix dx = layer_norm_backward(da1, c.ln1, w.ln1_gain, g.ln1_gain, g.ln1_bias);
    add_into(dx, dmid);
    return dx;
}

}  // namespace gapprune

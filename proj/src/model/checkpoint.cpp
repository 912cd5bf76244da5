// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

constexpr std::array<char, 4> kMagic = {'G', 'A', 'P', 'W'};

template <typename T>
void put(std::ostream& out, T value) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(bytes.data(), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
    std::array<char, sizeof(T)> bytes;
    if (!in.read(bytes.data(), sizeof(T))) {
        throw InputError("checkpoint " + path + " is truncated");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelWeights& weights, const ModelConfig& cfg) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InputError("cannot write checkpoint " + path);
    }
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    for (int v : {cfg.grid_size, cfg.num_colors, cfg.d_model, cfg.num_heads, cfg.head_dim,
                  cfg.encoder_layers, cfg.decoder_layers, cfg.vocab_size, cfg.max_seq_len,
                  cfg.mlp_ratio}) {
        put<std::int32_t>(out, v);
    }
    put<double>(out, cfg.theta_base);
    put<double>(out, cfg.embed_std);
    put<double>(out, cfg.init_std);

    std::uint32_t count = 0;
    weights.visit([&](const std::string&, const Matrix&) { ++count; });
    put<std::uint32_t>(out, count);
    weights.visit([&](const std::string& name, const Matrix& m) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, 2);
        put<std::uint64_t>(out, m.rows());
        put<std::uint64_t>(out, m.cols());
        for (double v : m.values()) {
            put<double>(out, v);
        }
    });
    if (!out) {
        throw InputError("failed while writing checkpoint " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open checkpoint " + path);
    }
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw InputError(path + " is not a gapprune checkpoint");
    }
    const auto version = take<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw InputError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    ModelConfig& cfg = ck.config;
    for (int* field : {&cfg.grid_size, &cfg.num_colors, &cfg.d_model, &cfg.num_heads, &cfg.head_dim,
                       &cfg.encoder_layers, &cfg.decoder_layers, &cfg.vocab_size, &cfg.max_seq_len,
                       &cfg.mlp_ratio}) {
        *field = take<std::int32_t>(in, path);
    }
    cfg.theta_base = take<double>(in, path);
    cfg.embed_std = take<double>(in, path);
    cfg.init_std = take<double>(in, path);
    cfg.validate();

    std::map<std::string, Matrix> tensors;
    const auto count = take<std::uint32_t>(in, path);
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto len = take<std::uint32_t>(in, path);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) {
            throw InputError("checkpoint " + path + " is truncated");
        }
        if (take<std::uint32_t>(in, path) != 2) {
            throw InputError("checkpoint tensor " + name + " is not rank 2");
        }
        const auto rows = take<std::uint64_t>(in, path);
        const auto cols = take<std::uint64_t>(in, path);
        std::vector<double> data(rows * cols);
        for (double& v : data) {
            v = take<double>(in, path);
        }
        tensors.emplace(name, Matrix(rows, cols, std::move(data)));
    }

    // Shapes come from a freshly initialised template for this config.
    Rng rng(0);
    ck.weights = init_weights(cfg, rng);
    ck.weights.visit([&](const std::string& name, Matrix& m) {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw InputError("checkpoint " + path + " lacks tensor " + name);
        }
        if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
            throw InputError("checkpoint tensor " + name + " has the wrong shape");
        }
        m = std::move(it->second);
    });
    if (!ck.weights.all_finite()) {
        throw InputError("checkpoint " + path + " contains non-finite values");
    }
    return ck;
}

}  // namespace gapprune

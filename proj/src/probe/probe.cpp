// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gapprune/errors.hpp"
#include "gapprune/evaluate.hpp"

namespace gapprune {

namespace {

std::vector<Matrix> cell_traces(const Image& image, const ModelWeights& w, const ModelConfig& cfg) {
    EncoderOutput out = encode_image(image, w, cfg);
    std::vector<Matrix> layers;
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    for (const Matrix& t : out.trace) {
        Matrix cells(n, t.cols());
        std::copy_n(t.row(1).data(), n * t.cols(), cells.data());
        layers.push_back(std::move(cells));
    }
    return layers;
}

Matrix standardise(const Matrix& x, const std::vector<double>& mean, const std::vector<double>& scale) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(r, c) = (x(r, c) - mean[c]) * scale[c];
        }
    }
    return out;
}

Matrix logits_of(const Matrix& x, const Matrix& weight, const std::vector<double>& bias) {
    Matrix z = matmul(x, weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < z.cols(); ++c) {
            z(r, c) += bias[c];
        }
    }
    return z;
}

Matrix stack_rows(const std::vector<Matrix>& parts) {
    Matrix out;
    for (const Matrix& p : parts) {
        for (std::size_t r = 0; r < p.rows(); ++r) {
            out.append_row(p.row(r));
        }
    }
    return out;
}

}  // namespace

ProbeData collect_features(const std::vector<Image>& images, std::size_t layer, const ModelWeights& w,
                           const ModelConfig& cfg) {
    if (layer > static_cast<std::size_t>(cfg.encoder_layers)) {
        throw InputError("collect_features: layer " + std::to_string(layer) + " outside [0, " +
                         std::to_string(cfg.encoder_layers) + "]");
    }
    ProbeData data;
    const int n = cfg.num_visual();
    for (const Image& img : images) {
        const Matrix cells = cell_traces(img, w, cfg)[layer];
        for (int i = 0; i < n; ++i) {
            data.features.append_row(cells.row(static_cast<std::size_t>(i)));
            data.labels.push_back(i);
        }
    }
    return data;
}

std::vector<int> LinearProbe::predict(const Matrix& features) const {
    const Matrix z = logits_of(standardise(features, mean, scale), weight, bias);
    std::vector<int> out(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        out[r] = static_cast<int>(argmax(z.row(r)));
    }
    return out;
}

double probe_loss(const Matrix& x, const std::vector<int>& labels, const Matrix& weight,
                  const std::vector<double>& bias, Matrix* grad_weight, std::vector<double>* grad_bias) {
    if (x.rows() != labels.size() || x.cols() != weight.rows() || bias.size() != weight.cols()) {
        throw ShapeError("probe_loss: inconsistent shapes");
    }
    const std::size_t classes = weight.cols();
    Matrix p = logits_of(x, weight, bias);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (std::size_t r = 0; r < p.rows(); ++r) {
        auto row = p.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) {
            total += std::exp(v - peak);
        }
        const auto y = static_cast<std::size_t>(labels[r]);
        if (y >= classes) {
            throw InputError("probe_loss: label out of range");
        }
        loss -= row[y] - peak - std::log(total);
        softmax_inplace(row);
        row[y] -= 1.0;  // row now holds dL/dz * B
    }
    if (grad_weight != nullptr) {
        *grad_weight = Matrix(weight.rows(), classes);
        for (double& v : p.values()) {
            v *= inv;
        }
        accumulate_transposed_product(x, p, *grad_weight);
    }
    if (grad_bias != nullptr) {
        const double scale = grad_weight != nullptr ? 1.0 : inv;
        grad_bias->assign(classes, 0.0);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            for (std::size_t c = 0; c < classes; ++c) {
                (*grad_bias)[c] += p(r, c) * scale;
            }
        }
    }
    return loss * inv;
}

LinearProbe train_probe(const Matrix& features, const std::vector<int>& labels, std::size_t num_classes,
                        int epochs, double lr, Rng& rng) {
    if (features.rows() != labels.size() || features.rows() == 0) {
        throw InputError("train_probe: need one label per feature row");
    }
    if (!features.all_finite()) {
        throw InputError("train_probe: non-finite features");
    }
    const std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) {
        throw InputError("train_probe: labels hold a single class");
    }
    if (*distinct.begin() < 0 || static_cast<std::size_t>(*distinct.rbegin()) >= num_classes) {
        throw InputError("train_probe: label outside [0, num_classes)");
    }
    const std::size_t d = features.cols();
    const double rows = static_cast<double>(features.rows());
    LinearProbe probe;
    probe.mean.assign(d, 0.0);
    probe.scale.assign(d, 1.0);
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < features.rows(); ++r) {
            mean += features(r, c);
        }
        mean /= rows;
        double var = 0.0;
        for (std::size_t r = 0; r < features.rows(); ++r) {
            var += (features(r, c) - mean) * (features(r, c) - mean);
        }
        var /= rows;
        probe.mean[c] = mean;
        probe.scale[c] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    const Matrix x = standardise(features, probe.mean, probe.scale);
    probe.weight = Matrix(d, num_classes);
    for (double& v : probe.weight.values()) {
        v = 0.01 * rng.normal();
    }
    probe.bias.assign(num_classes, 0.0);

    Matrix gw;
    std::vector<double> gb;
    for (int e = 0; e < epochs; ++e) {
        probe.loss_curve.push_back(probe_loss(x, labels, probe.weight, probe.bias, &gw, &gb));
        for (std::size_t i = 0; i < probe.weight.size(); ++i) {
            probe.weight.data()[i] -= lr * gw.data()[i];
        }
        for (std::size_t c = 0; c < num_classes; ++c) {
            probe.bias[c] -= lr * gb[c];
        }
    }
    probe.loss_curve.push_back(probe_loss(x, labels, probe.weight, probe.bias));
    return probe;
}

double probe_accuracy(const LinearProbe& probe, const Matrix& features, const std::vector<int>& labels) {
    if (labels.empty()) {
        return 0.0;
    }
    const std::vector<int> pred = probe.predict(features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += pred[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ProbeReport probe_all_layers(const std::vector<Image>& images, const ModelWeights& w,
                             const ModelConfig& cfg, const ProbeOptions& options, std::uint64_t seed) {
    if (images.size() < 2) {
        throw InputError("probe_all_layers: need at least two images");
    }
    if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
        throw ConfigError("probe_all_layers: train_fraction must lie in (0, 1)");
    }
    Rng rng(seed);
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng = rng.fork(0);
    split_rng.shuffle(order);
    const std::size_t n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(images.size()))), 1,
        images.size() - 1);

    const std::size_t num_layers = static_cast<std::size_t>(cfg.encoder_layers) + 1;
    std::vector<std::vector<Matrix>> traces(images.size());
    parallel_for(images.size(), [&](std::size_t i) { traces[i] = cell_traces(images[order[i]], w, cfg); });

    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    std::vector<int> train_labels;
    std::vector<int> test_labels;
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto& labels = i < n_train ? train_labels : test_labels;
        for (std::size_t c = 0; c < n; ++c) {
            labels.push_back(static_cast<int>(c));
        }
    }

    ProbeReport report;
    report.layers.resize(num_layers);
    parallel_for(num_layers, [&](std::size_t layer) {
        std::vector<Matrix> train_parts;
        std::vector<Matrix> test_parts;
        for (std::size_t i = 0; i < images.size(); ++i) {
            (i < n_train ? train_parts : test_parts).push_back(traces[i][layer]);
        }
        const Matrix train_x = stack_rows(train_parts);
        const Matrix test_x = stack_rows(test_parts);
        Rng layer_rng = rng.fork(1 + layer);
        const LinearProbe probe = train_probe(train_x, train_labels, n, options.epochs, options.lr, layer_rng);
        ProbeLayerResult& res = report.layers[layer];
        res.layer = layer;
        res.accuracy = probe_accuracy(probe, test_x, test_labels);
        res.train_accuracy = probe_accuracy(probe, train_x, train_labels);
        res.initial_loss = probe.loss_curve.front();
        res.final_loss = probe.loss_curve.back();
        res.loss_non_increasing = true;
        for (std::size_t e = 1; e < probe.loss_curve.size(); ++e) {
            if (probe.loss_curve[e] > probe.loss_curve[e - 1] + 1e-8) {
                res.loss_non_increasing = false;
            }
        }
        res.train_samples = train_labels.size();
        res.test_samples = test_labels.size();
    });
    return report;
}

nlohmann::ordered_json probe_report_to_json(const ProbeReport& report) {
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (const ProbeLayerResult& r : report.layers) {
        layers.push_back({{"layer", r.layer},
                          {"accuracy", r.accuracy},
                          {"train_accuracy", r.train_accuracy},
                          {"initial_loss", r.initial_loss},
                          {"final_loss", r.final_loss},
                          {"loss_non_increasing", r.loss_non_increasing},
                          {"train_samples", r.train_samples},
                          {"test_samples", r.test_samples}});
    }
    return {{"layers", layers}};
}

}  // namespace gapprune

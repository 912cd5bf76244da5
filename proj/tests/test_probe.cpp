// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "gapprune/dataset.hpp"
#include "gapprune/errors.hpp"
#include "gapprune/probe.hpp"
#include "support.hpp"

using namespace gapprune;
using namespace gapprune::testing;

namespace {

std::vector<Image> images_for(const ModelConfig& cfg, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Image> out;
    for (const RecExample& ex : generate_dataset(count, cfg, rng, {1, 3})) {
        out.push_back(ex.image);
    }
    return out;
}

}  // namespace

TEST_CASE("collect_features shape and labels") {
    const ModelConfig cfg = tiny_config();
    Rng rng(1);
    const ModelWeights w = init_weights(cfg, rng);
    const auto images = images_for(cfg, 5, 2);
    const ProbeData d = collect_features(images, 0, w, cfg);
    CHECK(d.features.rows() == 5 * 4);
    CHECK(d.features.cols() == 16);
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
        CHECK(d.labels[i] == static_cast<int>(i % 4));
    }
    CHECK_THROWS_AS(collect_features(images, 2, w, cfg), InputError);

    // Reordering images permutes rows without changing the (feature, label) multiset.
    std::vector<Image> reversed(images.rbegin(), images.rend());
    const ProbeData r = collect_features(reversed, 0, w, cfg);
    for (std::size_t img = 0; img < 5; ++img) {
        for (std::size_t c = 0; c < 4; ++c) {
            const auto a = d.features.row(img * 4 + c);
            const auto b = r.features.row((4 - img) * 4 + c);
            CHECK(std::equal(a.begin(), a.end(), b.begin()));
        }
    }
}

TEST_CASE("probe_loss gradient matches central differences") {
    Rng rng(3);
    const Matrix x = random_matrix(30, 6, rng);
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
        labels.push_back(i % 5);
    }
    for (int point = 0; point < 3; ++point) {
        Matrix w = random_matrix(6, 5, rng, 0.5);
        std::vector<double> b(5);
        for (double& v : b) {
            v = 0.3 * rng.normal();
        }
        Matrix gw;
        std::vector<double> gb;
        probe_loss(x, labels, w, b, &gw, &gb);
        const double h = 1e-5;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w.data()[i];
            w.data()[i] = saved + h;
            const double up = probe_loss(x, labels, w, b);
            w.data()[i] = saved - h;
            const double down = probe_loss(x, labels, w, b);
            w.data()[i] = saved;
            CHECK(gradient_error(gw.data()[i], (up - down) / (2 * h)) < 1e-6);
        }
        for (std::size_t c = 0; c < b.size(); ++c) {
            const double saved = b[c];
            b[c] = saved + h;
            const double up = probe_loss(x, labels, w, b);
            b[c] = saved - h;
            const double down = probe_loss(x, labels, w, b);
            b[c] = saved;
            CHECK(gradient_error(gb[c], (up - down) / (2 * h)) < 1e-6);
        }
    }
}

TEST_CASE("train_probe separates a separable toy set, monotonically") {
    Rng rng(4);
    Matrix x(40, 2);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 40; ++i) {
        const int y = static_cast<int>(i % 2);
        x(i, 0) = (y == 0 ? -2.0 : 2.0) + 0.3 * rng.normal();
        x(i, 1) = rng.normal();
        labels.push_back(y);
    }
    Rng init(5);
    const LinearProbe p = train_probe(x, labels, 2, 200, 0.1, init);
    CHECK(probe_accuracy(p, x, labels) == 1.0);
    for (std::size_t e = 1; e < p.loss_curve.size(); ++e) {
        CHECK(p.loss_curve[e] <= p.loss_curve[e - 1] + 1e-8);
    }
    Rng again(5);
    const LinearProbe q = train_probe(x, labels, 2, 200, 0.1, again);
    CHECK(q.weight == p.weight);
}

TEST_CASE("untrained probe is near chance; degenerate labels are rejected") {
    Rng rng(6);
    const std::size_t classes = 8;
    const Matrix x = random_matrix(4000, 6, rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 4000; ++i) {
        labels.push_back(static_cast<int>(rng.below(classes)));
    }
    Rng init(7);
    const LinearProbe p = train_probe(x, labels, classes, 0, 0.1, init);
    CHECK(std::abs(probe_accuracy(p, x, labels) - 1.0 / classes) < 0.05);
    Rng init2(8);
    CHECK_THROWS_AS(train_probe(x, std::vector<int>(4000, 3), classes, 10, 0.1, init2), InputError);
}

TEST_CASE("probe_all_layers reports every layer and decodes layer-0 positions") {
    const ModelConfig cfg = tiny_config();
    Rng rng(9);
    const ModelWeights w = init_weights(cfg, rng);
    const auto images = images_for(cfg, 60, 10);
    const ProbeReport report = probe_all_layers(images, w, cfg, {300, 0.1, 0.8}, 11);
    REQUIRE(report.layers.size() == static_cast<std::size_t>(cfg.encoder_layers) + 1);
    for (const ProbeLayerResult& r : report.layers) {
        CHECK(r.accuracy >= 0.0);
        CHECK(r.accuracy <= 1.0);
        CHECK(r.loss_non_increasing);
        CHECK(r.train_samples == 48 * 4);
        CHECK(r.test_samples == 12 * 4);
    }
    CHECK(report.layers[0].accuracy >= 0.99);
    const auto j = probe_report_to_json(report);
    CHECK(j["layers"].size() == report.layers.size());
    CHECK(j["layers"][0].contains("accuracy"));
    CHECK(j["layers"][0].contains("final_loss"));
    const ProbeReport again = probe_all_layers(images, w, cfg, {300, 0.1, 0.8}, 11);
    CHECK(probe_report_to_json(again) == j);
}

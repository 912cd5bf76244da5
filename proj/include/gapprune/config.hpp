// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gapprune/dataset.hpp"
#include "gapprune/pruning.hpp"
#include "gapprune/train.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

struct DataConfig {
    std::size_t train_size = 20000;
    std::size_t val_size = 1000;
    DatasetOptions objects;
};

struct SweepConfig {
    std::vector<Strategy> strategies{Strategy::cls_visual, Strategy::text_visual, Strategy::random,
                                     Strategy::spatial};
    std::vector<double> ratios{0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<Alignment> alignments{Alignment::gap, Alignment::shifted};
    // Timing is optional in sweeps; bench-ttft always measures.
    bool measure_ttft = false;
    std::size_t ttft_warmup = 3;
    std::size_t ttft_runs = 50;
    std::size_t ttft_sample = 16;
};

struct ProbeConfig {
    std::size_t images = 500;
    int epochs = 500;
    double lr = 0.1;
    double train_fraction = 0.8;
};

struct SeedConfig {
    std::uint64_t data = 0;
    std::uint64_t train = 0;
    std::uint64_t eval = 0;
    std::uint64_t probe = 0;
};

struct PathConfig {
    std::string output_dir = "out";
    std::string checkpoint = "out/model.gapw";
    std::string dataset = "out/dataset.jsonl";
};

struct RunConfig {
    ModelConfig model;
    DataConfig data;
    TrainOptions train;
    SweepConfig sweep;
    ProbeConfig probe;
    SeedConfig seeds;
    PathConfig paths;

    void validate() const;
};

// Missing sections and keys keep their defaults; unknown keys and wrong
// types raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json run_config_to_json(const RunConfig& run);
RunConfig load_run_config(const std::string& path);

}  // namespace gapprune

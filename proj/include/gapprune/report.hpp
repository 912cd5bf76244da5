// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gapprune/config.hpp"
#include "gapprune/dataset.hpp"
#include "gapprune/efficiency.hpp"
#include "gapprune/evaluate.hpp"
#include "gapprune/train.hpp"
#include "gapprune/weights.hpp"

namespace gapprune {

struct Datasets {
    std::vector<RecExample> train;
    std::vector<RecExample> val;
};

// Train and validation sets drawn from independent forks of seeds.data.
Datasets make_datasets(const RunConfig& run);

// Trains with seeds.train on make_datasets(run).train.
ModelWeights train_from_config(const RunConfig& run, const Datasets& data, TrainReport* report = nullptr,
                               const TrainLog& log = {});

struct SweepRow {
    EvalSetting setting;
    std::size_t retained_tokens = 0;
    double token_percent = 0.0;
    double accuracy = 0.0;
    double normalized_accuracy = 0.0;  // accuracy / unpruned accuracy
    std::optional<double> delta;       // gap - shifted for this (strategy, ratio)
    std::uint64_t flops_estimate = 0;
    std::uint64_t seed = 0;
    std::optional<double> ttft_ms;
};

struct SweepReport {
    nlohmann::ordered_json config;
    std::size_t examples = 0;
    double unpruned_accuracy = 0.0;
    std::uint64_t unpruned_flops = 0;
    // Nothing removed: survivors reordered by CLS score with sequential ids,
    // and the text displaced as if half the prefix had been dropped.
    double permuted_full_accuracy = 0.0;
    double shifted_full_accuracy = 0.0;
    std::int64_t shifted_full_displacement = 0;
    std::vector<SweepRow> rows;  // strategies x ratios x alignments, in that nesting order
};

// Cartesian evaluation over the sweep lists on `examples`.
SweepReport run_sweep(const ModelWeights& w, const RunConfig& run, const std::vector<RecExample>& examples);

// Fills ttft_ms for every row (bench protocol from run.sweep).
void attach_ttft(SweepReport& report, const ModelWeights& w, const ModelConfig& cfg,
                 const std::vector<RecExample>& examples, const SweepConfig& sweep, std::uint64_t seed);

// Everything except the "timing" section is a pure function of the config.
nlohmann::ordered_json sweep_report_to_json(const SweepReport& report);

inline constexpr const char* kCsvHeader =
    "strategy,ratio,alignment,retained_tokens,token_percent,accuracy,normalized_accuracy,delta,"
    "flops_estimate,seed,ttft_ms";
std::string sweep_report_to_csv(const SweepReport& report);

// Writes report.json and report.csv into directory dir (created if missing).
void write_sweep_report(const SweepReport& report, const std::string& dir);

// Fixed-precision text for reports, so output bytes do not depend on the
// shortest-round-trip printer.
std::string format_number(double value, int digits = 6);

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw InputError("cannot write '" + path.string() + "'");
    }
}

nlohmann::ordered_json number(double v) {
    // Stored as a number parsed from fixed-precision text.
    return nlohmann::ordered_json::parse(format_number(v));
}

}  // namespace

std::string format_number(double value, int digits) {
    if (!std::isfinite(value)) {
        throw InputError("format_number: non-finite value");
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, value);
    std::string s = buf;
    if (s == "-0." + std::string(static_cast<std::size_t>(digits), '0')) {
        s.erase(0, 1);
    }
    return s;
}

Datasets make_datasets(const RunConfig& run) {
    const Rng root(run.seeds.data);
    Rng train_rng = root.fork(0);
    Rng val_rng = root.fork(1);
    return {generate_dataset(run.data.train_size, run.model, train_rng, run.data.objects),
            generate_dataset(run.data.val_size, run.model, val_rng, run.data.objects)};
}

ModelWeights train_from_config(const RunConfig& run, const Datasets& data, TrainReport* report,
                               const TrainLog& log) {
    Rng rng(run.seeds.train);
    return train_model(data.train, data.val, run.model, run.train, rng, report, log);
}

SweepReport run_sweep(const ModelWeights& w, const RunConfig& run, const std::vector<RecExample>& examples) {
    run.validate();
    const ModelConfig& cfg = run.model;
    const std::uint64_t seed = run.seeds.eval;
    const std::size_t n = static_cast<std::size_t>(cfg.num_visual());
    const std::size_t text_len = examples.empty() ? 1 : prompt_tokens(examples.front()).size();
    const std::vector<EncoderOutput> encoded = encode_dataset(examples, w, cfg);

    SweepReport report;
    report.config = run_config_to_json(run);
    report.examples = examples.size();
    report.unpruned_accuracy = evaluate(w, cfg, examples, EvalSetting{}, seed, &encoded);
    report.unpruned_flops = estimate_flops(cfg, prefill_length(cfg, EvalSetting{}, text_len));
    report.permuted_full_accuracy =
        evaluate(w, cfg, examples, {Strategy::cls_visual, 1.0, Alignment::permuted}, seed, &encoded);
    report.shifted_full_displacement = static_cast<std::int64_t>(n - retained_count(n, 0.5));
    report.shifted_full_accuracy =
        evaluate_shifted_full(w, cfg, examples, report.shifted_full_displacement, &encoded);

    std::map<std::pair<Strategy, double>, std::map<Alignment, double>> paired;
    for (Strategy s : run.sweep.strategies) {
        for (double r : run.sweep.ratios) {
            for (Alignment a : run.sweep.alignments) {
                SweepRow row;
                row.setting = {s, r, a};
                row.retained_tokens = prefill_length(cfg, row.setting, 0) - 1;
                row.token_percent = 100.0 * static_cast<double>(row.retained_tokens) / static_cast<double>(n);
                row.accuracy = evaluate(w, cfg, examples, row.setting, seed, &encoded);
                row.normalized_accuracy =
                    report.unpruned_accuracy > 0.0 ? row.accuracy / report.unpruned_accuracy : 0.0;
                row.flops_estimate = estimate_flops(cfg, prefill_length(cfg, row.setting, text_len));
                row.seed = seed;
                paired[{s, r}][a] = row.accuracy;
                report.rows.push_back(row);
            }
        }
    }
    for (SweepRow& row : report.rows) {
        const auto& accs = paired[{row.setting.strategy, row.setting.ratio}];
        const auto gap = accs.find(Alignment::gap);
        const auto shifted = accs.find(Alignment::shifted);
        if (gap != accs.end() && shifted != accs.end()) {
            row.delta = gap->second - shifted->second;
        }
    }
    return report;
}

void attach_ttft(SweepReport& report, const ModelWeights& w, const ModelConfig& cfg,
                 const std::vector<RecExample>& examples, const SweepConfig& sweep, std::uint64_t seed) {
    std::vector<EvalSetting> settings;
    for (const SweepRow& row : report.rows) {
        settings.push_back(row.setting);
    }
    const TtftOptions options{sweep.ttft_warmup, sweep.ttft_runs, sweep.ttft_sample, seed};
    const std::vector<TtftResult> results = measure_ttft(w, cfg, examples, settings, options);
    for (std::size_t i = 0; i < results.size(); ++i) {
        report.rows[i].ttft_ms = results[i].mean_ms;
    }
}

nlohmann::ordered_json sweep_report_to_json(const SweepReport& report) {
    using json = nlohmann::ordered_json;
    json j;
    j["meta"] = {{"tool", "gapprune"}, {"examples", report.examples}, {"config", report.config}};
    j["baseline"] = {{"accuracy", number(report.unpruned_accuracy)},
                     {"flops_estimate", report.unpruned_flops}};
    j["misalignment"] = {{"permuted_full_accuracy", number(report.permuted_full_accuracy)},
                         {"shifted_full_accuracy", number(report.shifted_full_accuracy)},
                         {"shifted_full_displacement", report.shifted_full_displacement}};
    json rows = json::array();
    json timing = json::array();
    for (const SweepRow& r : report.rows) {
        rows.push_back({{"strategy", std::string(to_string(r.setting.strategy))},
                        {"ratio", number(r.setting.ratio)},
                        {"alignment", std::string(to_string(r.setting.alignment))},
                        {"retained_tokens", r.retained_tokens},
                        {"token_percent", number(r.token_percent)},
                        {"accuracy", number(r.accuracy)},
                        {"normalized_accuracy", number(r.normalized_accuracy)},
                        {"delta", r.delta ? number(*r.delta) : json(nullptr)},
                        {"flops_estimate", r.flops_estimate},
                        {"seed", r.seed}});
        if (r.ttft_ms) {
            timing.push_back({{"strategy", std::string(to_string(r.setting.strategy))},
                              {"ratio", number(r.setting.ratio)},
                              {"alignment", std::string(to_string(r.setting.alignment))},
                              {"ttft_ms", number(*r.ttft_ms)}});
        }
    }
    j["rows"] = rows;
    j["timing"] = timing;
    return j;
}

std::string sweep_report_to_csv(const SweepReport& report) {
    std::ostringstream out;
    out << kCsvHeader << '\n';
    for (const SweepRow& r : report.rows) {
        out << to_string(r.setting.strategy) << ',' << format_number(r.setting.ratio) << ','
            << to_string(r.setting.alignment) << ',' << r.retained_tokens << ','
            << format_number(r.token_percent) << ',' << format_number(r.accuracy) << ','
            << format_number(r.normalized_accuracy) << ',' << (r.delta ? format_number(*r.delta) : "")
            << ',' << r.flops_estimate << ',' << r.seed << ','
            << (r.ttft_ms ? format_number(*r.ttft_ms) : "") << '\n';
    }
    return out.str();
}

void write_sweep_report(const SweepReport& report, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_file(std::filesystem::path(dir) / "report.json", sweep_report_to_json(report).dump(2) + "\n");
    write_file(std::filesystem::path(dir) / "report.csv", sweep_report_to_csv(report));
}

}  // namespace gapprune

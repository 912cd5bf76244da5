// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "gapprune/checkpoint.hpp"
#include "gapprune/config.hpp"
#include "gapprune/errors.hpp"
#include "gapprune/probe.hpp"
#include "gapprune/report.hpp"

namespace gapprune {

namespace {

struct CommonOptions {
    std::string config;
    std::string checkpoint;
};

RunConfig load_or_default(const CommonOptions& common) {
    RunConfig run = common.config.empty() ? RunConfig{} : load_run_config(common.config);
    if (!common.checkpoint.empty()) {
        run.paths.checkpoint = common.checkpoint;
    }
    return run;
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) {
        throw InputError("cannot write '" + path.string() + "'");
    }
}

ModelWeights train_and_save(const RunConfig& run, const Datasets& data, std::ostream& err,
                            TrainReport* report = nullptr) {
    ModelWeights w = train_from_config(run, data, report, [&](const std::string& line) { err << line << '\n'; });
    const std::filesystem::path path(run.paths.checkpoint);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    save_checkpoint(run.paths.checkpoint, w, run.model);
    return w;
}

// Loads paths.checkpoint, or trains and saves a model when it does not exist.
ModelWeights obtain_model(const RunConfig& run, const Datasets& data, std::ostream& err) {
    if (std::filesystem::exists(run.paths.checkpoint)) {
        Checkpoint ck = load_checkpoint(run.paths.checkpoint);
        if (!(ck.config == run.model)) {
            throw ConfigError("checkpoint '" + run.paths.checkpoint +
                              "' was saved with a different model config");
        }
        return std::move(ck.weights);
    }
    err << "no checkpoint at '" << run.paths.checkpoint << "', training one\n";
    return train_and_save(run, data, err);
}

std::string fixed(double v) { return format_number(v); }

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Visual-token pruning with position-id realignment on a synthetic grounding task",
                 "gapprune"};
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
        sub->add_option("--config", common.config, "JSON run config (defaults when omitted)");
        if (with_checkpoint) {
            sub->add_option("--checkpoint", common.checkpoint, "Weights file (overrides paths.checkpoint)");
        }
    };

    std::string out_path;
    std::optional<std::size_t> count;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as JSON lines");
    add_common(gen, false);
    gen->add_option("--out", out_path, "Output file (default paths.dataset)");
    gen->add_option("--count", count, "Number of examples (default data.train_size)");

    auto* train = app.add_subcommand("train", "Train a model and save its checkpoint");
    add_common(train, true);

    std::string strategy = "none";
    double ratio = 1.0;
    std::string alignment = "gap";
    std::string dataset_path;
    auto* eval = app.add_subcommand("eval", "Accuracy of one pruning setting");
    add_common(eval, true);
    eval->add_option("--strategy", strategy, "none, cls_visual, text_visual, random or spatial");
    eval->add_option("--ratio", ratio, "Retention ratio in (0, 1]");
    eval->add_option("--alignment", alignment, "gap, shifted or permuted");
    eval->add_option("--dataset", dataset_path, "JSON lines dataset (default: validation split)");

    bool with_ttft = false;
    auto* sweep = app.add_subcommand("sweep", "Evaluate the sweep grid and write report.json and report.csv");
    add_common(sweep, true);
    sweep->add_option("--out", out_path, "Output directory (default paths.output_dir)");
    sweep->add_flag("--ttft", with_ttft, "Also measure time to first token per row");

    auto* probe = app.add_subcommand("probe", "Linear position probes on every encoder layer");
    add_common(probe, true);
    probe->add_option("--out", out_path, "Output file (default <output_dir>/probe.json)");

    std::string bench_strategy = "cls_visual";
    double bench_ratio = 0.25;
    std::optional<std::size_t> runs;
    auto* bench = app.add_subcommand("bench-ttft", "Time to first token: unpruned, gap and shifted");
    add_common(bench, true);
    bench->add_option("--strategy", bench_strategy, "Pruning strategy");
    bench->add_option("--ratio", bench_ratio, "Retention ratio in (0, 1]");
    bench->add_option("--runs", runs, "Timed runs after warmup (default sweep.ttft_runs)");
    bench->add_option("--out", out_path, "Output file (default <output_dir>/ttft.json)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        RunConfig run = load_or_default(common);
        if (*gen) {
            Rng rng(run.seeds.data);
            const std::size_t n = count.value_or(run.data.train_size);
            if (n == 0) {
                throw ConfigError("--count must be positive");
            }
            const auto examples = generate_dataset(n, run.model, rng, run.data.objects);
            const std::filesystem::path path(out_path.empty() ? run.paths.dataset : out_path);
            if (path.has_parent_path()) {
                std::filesystem::create_directories(path.parent_path());
            }
            write_dataset(path.string(), examples);
            out << "wrote " << examples.size() << " examples to " << path.string() << '\n';
            return 0;
        }

        const Datasets data = make_datasets(run);
        if (*train) {
            TrainReport report;
            train_and_save(run, data, err, &report);
            write_json(std::filesystem::path(run.paths.output_dir) / "train_report.json",
                       {{"initial_decoder_loss", report.initial_decoder_loss},
                        {"final_decoder_loss", report.final_decoder_loss},
                        {"train_accuracy", report.train_accuracy},
                        {"val_accuracy", report.val_accuracy},
                        {"encoder_losses", report.encoder_losses},
                        {"decoder_losses", report.decoder_losses},
                        {"seconds", report.seconds}});
            out << "train_accuracy " << fixed(report.train_accuracy) << " val_accuracy "
                << fixed(report.val_accuracy) << " checkpoint " << run.paths.checkpoint << '\n';
            return 0;
        }

        const ModelWeights w = obtain_model(run, data, err);
        if (*eval) {
            const EvalSetting setting{parse_strategy(strategy), ratio, parse_alignment(alignment)};
            retained_count(static_cast<std::size_t>(run.model.num_visual()), ratio);  // validates ratio
            const auto examples = dataset_path.empty() ? data.val : read_dataset(dataset_path, run.model);
            const double acc = evaluate(w, run.model, examples, setting, run.seeds.eval);
            out << "accuracy " << fixed(acc) << '\n';
            return 0;
        }
        if (*sweep) {
            SweepReport report = run_sweep(w, run, data.val);
            if (with_ttft || run.sweep.measure_ttft) {
                attach_ttft(report, w, run.model, data.val, run.sweep, run.seeds.eval);
            }
            const std::string dir = out_path.empty() ? run.paths.output_dir : out_path;
            write_sweep_report(report, dir);
            out << "wrote " << (std::filesystem::path(dir) / "report.json").string() << " and "
                << (std::filesystem::path(dir) / "report.csv").string() << '\n';
            return 0;
        }
        if (*probe) {
            Rng rng(run.seeds.probe);
            std::vector<Image> images;
            for (const RecExample& ex : generate_dataset(run.probe.images, run.model, rng, run.data.objects)) {
                images.push_back(ex.image);
            }
            const ProbeOptions options{run.probe.epochs, run.probe.lr, run.probe.train_fraction};
            const ProbeReport report = probe_all_layers(images, w, run.model, options, run.seeds.probe);
            const std::filesystem::path path =
                out_path.empty() ? std::filesystem::path(run.paths.output_dir) / "probe.json" : std::filesystem::path(out_path);
            write_json(path, probe_report_to_json(report));
            for (const ProbeLayerResult& r : report.layers) {
                out << "layer " << r.layer << " accuracy " << fixed(r.accuracy) << " final_loss "
                    << fixed(r.final_loss) << '\n';
            }
            return 0;
        }
        if (*bench) {
            const Strategy s = parse_strategy(bench_strategy);
            const std::vector<EvalSetting> settings{
                {Strategy::none, 1.0, Alignment::gap}, {s, bench_ratio, Alignment::gap}, {s, bench_ratio, Alignment::shifted}};
            const TtftOptions options{run.sweep.ttft_warmup, runs.value_or(run.sweep.ttft_runs),
                                      run.sweep.ttft_sample, run.seeds.eval};
            const auto results = measure_ttft(w, run.model, data.val, settings, options);
            nlohmann::ordered_json rows = nlohmann::ordered_json::array();
            for (const TtftResult& r : results) {
                rows.push_back({{"strategy", std::string(to_string(r.setting.strategy))},
                                {"ratio", r.setting.ratio},
                                {"alignment", std::string(to_string(r.setting.alignment))},
                                {"mean_ms", r.mean_ms},
                                {"stddev_ms", r.stddev_ms},
                                {"cv", r.cv},
                                {"runs", r.runs}});
                out << to_string(r.setting.strategy) << ' ' << fixed(r.setting.ratio) << ' '
                    << to_string(r.setting.alignment) << " ttft_ms " << fixed(r.mean_ms) << " cv "
                    << fixed(r.cv) << '\n';
            }
            const std::filesystem::path path =
                out_path.empty() ? std::filesystem::path(run.paths.output_dir) / "ttft.json" : std::filesystem::path(out_path);
            write_json(path, {{"timing", rows}});
            return 0;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace gapprune

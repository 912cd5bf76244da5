// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gapprune/checkpoint.hpp"
#include "gapprune/cli.hpp"
#include "gapprune/config.hpp"
#include "gapprune/dataset.hpp"
#include "gapprune/efficiency.hpp"
#include "gapprune/errors.hpp"
#include "gapprune/evaluate.hpp"
#include "gapprune/report.hpp"
#include "gapprune/train.hpp"
#include "support.hpp"

using namespace gapprune;
using namespace gapprune::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_run(const fs::path& dir) {
    RunConfig run;
    run.model = tiny_config();
    run.data.train_size = 200;
    run.data.val_size = 40;
    run.data.objects = {1, 3};
    run.train.encoder_steps = 5;
    run.train.decoder_steps = 10;
    run.train.warmup_steps = 2;
    run.train.batch_size = 8;
    run.train.log_every = 5;
    run.sweep.ratios = {0.5, 1.0};
    run.sweep.ttft_runs = 2;
    run.sweep.ttft_warmup = 1;
    run.sweep.ttft_sample = 2;
    run.probe.images = 20;
    run.probe.epochs = 20;
    run.paths.output_dir = dir.string();
    run.paths.checkpoint = (dir / "model.gapw").string();
    run.paths.dataset = (dir / "data.jsonl").string();
    return run;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
    std::ostringstream o;
    std::ostringstream e;
    const int code = run_cli(args, o, e);
    if (out != nullptr) {
        *out = o.str();
    }
    if (err != nullptr) {
        *err = e.str();
    }
    return code;
}

}  // namespace

TEST_CASE("generate_dataset: determinism, invariants, uniform answers") {
    const ModelConfig cfg;
    Rng a(1);
    Rng b(1);
    const auto da = generate_dataset(10000, cfg, a);
    CHECK(da == generate_dataset(10000, cfg, b));
    std::vector<int> hist(static_cast<std::size_t>(cfg.num_visual()), 0);
    for (const RecExample& ex : da) {
        CHECK_NOTHROW(validate_example(ex, cfg));
        ++hist[static_cast<std::size_t>(ex.answer_cell)];
    }
    // Multinomial bound: count ~ Binomial(10000, 1/16), 3 sigma.
    const double p = 1.0 / cfg.num_visual();
    const double mean = 10000 * p;
    const double sigma = std::sqrt(10000 * p * (1 - p));
    for (int h : hist) {
        CHECK(std::abs(h - mean) <= 3 * sigma);
    }
    RecExample bad = da.front();
    bad.answer_cell = (bad.answer_cell + 1) % cfg.num_visual();
    CHECK_THROWS_AS(validate_example(bad, cfg), InputError);
}

TEST_CASE("dataset JSON lines round trip") {
    TempDir dir("gapprune_dataset_test");
    const ModelConfig cfg;
    Rng rng(2);
    const auto data = generate_dataset(50, cfg, rng);
    const std::string path = (dir.path / "d.jsonl").string();
    write_dataset(path, data);
    CHECK(read_dataset(path, cfg) == data);
    write_text(dir.path / "bad.jsonl", "{\"image\":[0],\"query_color\":1,\"answer_cell\":0}\n");
    CHECK_THROWS_AS(read_dataset((dir.path / "bad.jsonl").string(), cfg), InputError);
}

TEST_CASE("run config parsing") {
    const RunConfig def = run_config_from_json(nlohmann::json::object());
    CHECK(def.model == ModelConfig{});
    CHECK(def.sweep.strategies.size() == 4);
    CHECK(def.sweep.ratios.size() == 9);
    CHECK(def.sweep.alignments.size() == 2);

    const auto j = nlohmann::json::parse(R"({"train":{"decoder_steps":7},"sweep":{"strategies":["random"],"ratios":[0.5]}})");
    const RunConfig run = run_config_from_json(j);
    CHECK(run.train.decoder_steps == 7);
    CHECK(run.sweep.strategies == std::vector<Strategy>{Strategy::random});

    const RunConfig back = run_config_from_json(nlohmann::json::parse(run_config_to_json(run).dump()));
    CHECK(run_config_to_json(back) == run_config_to_json(run));

    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"trian":{}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"train":{"steps":1}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"sweep":{"ratios":[1.5]}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"sweep":{"strategies":[]}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"sweep":{"alignments":["up"]}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"train":{"batch_size":"x"}})")), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.json"), ConfigError);
}

TEST_CASE("estimate_flops formula and instrumented oracle") {
    ModelConfig cfg;
    const std::uint64_t d = 64;
    CHECK(estimate_flops(cfg, 10) == 2 * (8 * 10 * d * d + 4 * 100 * d + 16 * 10 * d * d));
    ModelConfig deeper = cfg;
    deeper.decoder_layers = 4;
    CHECK(estimate_flops(deeper, 18) == 2 * estimate_flops(cfg, 18));
    CHECK_THROWS_AS(estimate_flops(cfg, 0), InputError);

    Rng rng(3);
    const ModelWeights w = init_weights(cfg, rng);
    const auto data = generate_dataset(3, cfg, rng);
    for (const EvalSetting& s : {EvalSetting{}, EvalSetting{Strategy::cls_visual, 0.25, Alignment::gap},
                                 EvalSetting{Strategy::spatial, 0.5, Alignment::shifted}}) {
        const double counted = static_cast<double>(instrumented_prefill_flops(w, cfg, data[0], s));
        const double estimate = static_cast<double>(estimate_flops(cfg, prefill_length(cfg, s, 1)));
        CHECK(std::abs(counted - estimate) / counted < 0.02);
    }
}

TEST_CASE("worker_count honours GAP_PRUNE_THREADS") {
    ::setenv("GAP_PRUNE_THREADS", "1", 1);
    CHECK(worker_count(100) == 1);
    ::setenv("GAP_PRUNE_THREADS", "zero", 1);
    CHECK_THROWS_AS(worker_count(100), ConfigError);
    ::unsetenv("GAP_PRUNE_THREADS");
    CHECK(worker_count(1) == 1);
    CHECK(worker_count(100) >= 1);
}

TEST_CASE("evaluation does not depend on the thread count") {
    const ModelConfig cfg = tiny_config();
    Rng rng(4);
    const ModelWeights w = init_weights(cfg, rng);
    const auto data = generate_dataset(30, cfg, rng, {1, 3});
    const EvalSetting s{Strategy::random, 0.5, Alignment::gap};
    ::setenv("GAP_PRUNE_THREADS", "1", 1);
    const double one = evaluate(w, cfg, data, s, 7);
    ::setenv("GAP_PRUNE_THREADS", "3", 1);
    const double three = evaluate(w, cfg, data, s, 7);
    ::unsetenv("GAP_PRUNE_THREADS");
    CHECK(one == three);
    CHECK(evaluate(w, cfg, data, {Strategy::cls_visual, 1.0, Alignment::gap}, 0) == evaluate(w, cfg, data, {}, 0));
}

TEST_CASE("training is deterministic and rejects bad options") {
    TempDir dir("gapprune_train_test");
    const RunConfig run = tiny_run(dir.path);
    const Datasets data = make_datasets(run);
    TrainReport ra;
    const ModelWeights a = train_from_config(run, data, &ra);
    const ModelWeights b = train_from_config(run, data);
    CHECK(a.head_w == b.head_w);
    CHECK(a.pos_embed == b.pos_embed);
    CHECK(ra.decoder_losses.size() >= 2);
    CHECK(ra.val_accuracy >= 0.0);
    TrainOptions bad = run.train;
    bad.attention_dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    TrainOptions hot = run.train;
    hot.decoder_lr = 1e300;
    hot.encoder_steps = 0;
    hot.warmup_steps = 0;
    Rng rng(0);
    CHECK_THROWS_AS(train_model(data.train, data.val, run.model, hot, rng), DivergenceError);
    CHECK(learning_rate(0, 100, 10, 1.0) == doctest::Approx(0.1 * 1.0));
    CHECK(learning_rate(100, 100, 10, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("sweep rows, deltas and report formats") {
    TempDir dir("gapprune_sweep_test");
    RunConfig run = tiny_run(dir.path);
    const Datasets data = make_datasets(run);
    Rng rng(5);
    const ModelWeights w = init_weights(run.model, rng);
    const SweepReport report = run_sweep(w, run, data.val);
    CHECK(report.rows.size() == 4 * 2 * 2);
    for (const SweepRow& r : report.rows) {
        CHECK(r.accuracy >= 0.0);
        CHECK(r.accuracy <= 1.0);
        CHECK(r.token_percent > 0.0);
        CHECK(r.token_percent <= 100.0);
        REQUIRE(r.delta.has_value());
        if (r.setting.ratio == 1.0) {
            CHECK(r.accuracy == report.unpruned_accuracy);
            CHECK(*r.delta == 0.0);
        }
    }
    for (std::size_t i = 0; i + 1 < report.rows.size(); i += 2) {
        CHECK(*report.rows[i].delta == report.rows[i].accuracy - report.rows[i + 1].accuracy);
    }
    CHECK(report.rows[0].token_percent == 50.0);

    const std::string csv = sweep_report_to_csv(report);
    CHECK(csv.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 16);

    const auto j = sweep_report_to_json(report);
    CHECK(j["rows"].size() == 16);
    CHECK(j["timing"].empty());
    CHECK(sweep_report_to_json(run_sweep(w, run, data.val)).dump() == j.dump());

    SweepReport timed = report;
    attach_ttft(timed, w, run.model, data.val, run.sweep, 0);
    const auto jt = sweep_report_to_json(timed);
    CHECK(jt["timing"].size() == 16);
    nlohmann::ordered_json stripped = jt;
    stripped.erase("timing");
    nlohmann::ordered_json base = j;
    base.erase("timing");
    CHECK(stripped.dump() == base.dump());

    CHECK(format_number(0.5) == "0.500000");
    CHECK(format_number(-0.0) == "0.000000");
}

TEST_CASE("measure_ttft returns one positive result per setting") {
    const ModelConfig cfg = tiny_config();
    Rng rng(6);
    const ModelWeights w = init_weights(cfg, rng);
    const auto data = generate_dataset(4, cfg, rng, {1, 3});
    const std::vector<EvalSetting> settings{{}, {Strategy::cls_visual, 0.5, Alignment::gap}};
    const auto res = measure_ttft(w, cfg, data, settings, {1, 3, 2, 0});
    REQUIRE(res.size() == 2);
    for (const TtftResult& r : res) {
        CHECK(r.mean_ms > 0.0);
        CHECK(r.runs == 3);
    }
    CHECK_THROWS_AS(measure_ttft(w, cfg, data, {}, {}), InputError);
}

TEST_CASE("cli exit codes and outputs") {
    TempDir dir("gapprune_cli_test");
    const RunConfig run = tiny_run(dir.path);
    const fs::path config = dir.path / "run.json";
    write_text(config, run_config_to_json(run).dump(2));
    const std::string cfg = config.string();
    std::string out;
    std::string err;

    CHECK(cli({"sweep", "--bogus"}, &out, &err) == 2);
    CHECK(err.find("bogus") != std::string::npos);
    CHECK(cli({}, &out, &err) == 2);
    CHECK(cli({"--help"}, &out, &err) == 0);
    CHECK(out.find("sweep") != std::string::npos);

    CHECK(cli({"sweep", "--config", (dir.path / "missing.json").string()}, &out, &err) != 0);
    CHECK(err.find("missing.json") != std::string::npos);
    write_text(dir.path / "typo.json", R"({"modle":{}})");
    CHECK(cli({"eval", "--config", (dir.path / "typo.json").string()}, &out, &err) == 1);
    CHECK(err.find("modle") != std::string::npos);

    CHECK(cli({"gen-data", "--config", cfg, "--count", "12"}, &out, &err) == 0);
    CHECK(read_dataset(run.paths.dataset, run.model).size() == 12);

    CHECK(cli({"train", "--config", cfg}, &out, &err) == 0);
    CHECK(fs::exists(run.paths.checkpoint));
    CHECK(fs::exists(dir.path / "train_report.json"));

    CHECK(cli({"eval", "--config", cfg, "--strategy", "cls_visual", "--ratio", "0.5", "--alignment", "gap"}, &out,
              &err) == 0);
    CHECK(out.rfind("accuracy ", 0) == 0);
    CHECK(std::count(out.begin(), out.end(), '\n') == 1);
    CHECK(cli({"eval", "--config", cfg, "--ratio", "1.5"}, &out, &err) == 1);
    CHECK(cli({"eval", "--config", cfg, "--strategy", "best"}, &out, &err) == 1);

    CHECK(cli({"sweep", "--config", cfg}, &out, &err) == 0);
    CHECK(fs::exists(dir.path / "report.json"));
    CHECK(fs::exists(dir.path / "report.csv"));
    const std::string first = read_text(dir.path / "report.json");
    CHECK(cli({"sweep", "--config", cfg}, &out, &err) == 0);
    CHECK(read_text(dir.path / "report.json") == first);

    CHECK(cli({"probe", "--config", cfg}, &out, &err) == 0);
    const auto probe = nlohmann::json::parse(read_text(dir.path / "probe.json"));
    CHECK(probe["layers"].size() == static_cast<std::size_t>(run.model.encoder_layers) + 1);

    CHECK(cli({"bench-ttft", "--config", cfg, "--runs", "2"}, &out, &err) == 0);
    CHECK(nlohmann::json::parse(read_text(dir.path / "ttft.json"))["timing"].size() == 3);

    // A checkpoint saved with another model config is refused.
    RunConfig other = run;
    other.model.d_model = 32;
    other.model.head_dim = 16;
    write_text(dir.path / "other.json", run_config_to_json(other).dump());
    CHECK(cli({"eval", "--config", (dir.path / "other.json").string()}, &out, &err) == 1);
}

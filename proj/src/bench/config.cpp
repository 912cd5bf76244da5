// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

using nlohmann::json;
using Setter = std::function<void(const json&)>;

// Applies one setter per key of a JSON object, rejecting unknown keys.
void apply(const json& j, const std::string& section, const std::map<std::string, Setter>& fields) {
    if (!j.is_object()) {
        throw ConfigError("config: '" + section + "' must be an object");
    }
    for (const auto& [key, value] : j.items()) {
        const auto it = fields.find(key);
        if (it == fields.end()) {
            throw ConfigError("config: unknown key '" + section + "." + key + "'");
        }
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
        }
    }
}

template <typename T>
Setter set(T& target) {
    return [&target](const json& v) { target = v.get<T>(); };
}

Setter set_strategies(std::vector<Strategy>& target) {
    return [&target](const json& v) {
        target.clear();
        for (const auto& s : v) {
            target.push_back(parse_strategy(s.get<std::string>()));
        }
    };
}

Setter set_alignments(std::vector<Alignment>& target) {
    return [&target](const json& v) {
        target.clear();
        for (const auto& s : v) {
            target.push_back(parse_alignment(s.get<std::string>()));
        }
    };
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (data.train_size == 0 || data.val_size == 0) {
        throw ConfigError("config: data sizes must be positive");
    }
    if (data.objects.min_objects < 1 || data.objects.max_objects < data.objects.min_objects ||
        data.objects.max_objects > model.num_colors - 1 ||
        data.objects.max_objects > model.num_visual()) {
        throw ConfigError("config: object counts must satisfy 1 <= min <= max < num_colors and max <= cells");
    }
    if (sweep.strategies.empty()) {
        throw ConfigError("config: sweep needs at least one strategy");
    }
    if (sweep.ratios.empty() || sweep.alignments.empty()) {
        throw ConfigError("config: sweep needs at least one ratio and one alignment");
    }
    for (double r : sweep.ratios) {
        if (!(r > 0.0 && r <= 1.0)) {
            throw ConfigError("config: sweep ratio " + std::to_string(r) + " outside (0, 1]");
        }
    }
    if (sweep.ttft_runs == 0 || sweep.ttft_sample == 0) {
        throw ConfigError("config: ttft_runs and ttft_sample must be positive");
    }
    if (probe.images < 2 || probe.epochs < 0 || !(probe.lr > 0.0) ||
        !(probe.train_fraction > 0.0 && probe.train_fraction < 1.0)) {
        throw ConfigError("config: probe needs >= 2 images, epochs >= 0, lr > 0, train_fraction in (0, 1)");
    }
}

RunConfig run_config_from_json(const json& j) {
    RunConfig run;
    std::map<std::string, Setter> sections;
    sections["model"] = [&](const json& v) {
        ModelConfig& m = run.model;
        apply(v, "model",
              {{"grid_size", set(m.grid_size)},       {"num_colors", set(m.num_colors)},
               {"d_model", set(m.d_model)},           {"num_heads", set(m.num_heads)},
               {"head_dim", set(m.head_dim)},         {"encoder_layers", set(m.encoder_layers)},
               {"decoder_layers", set(m.decoder_layers)}, {"vocab_size", set(m.vocab_size)},
               {"max_seq_len", set(m.max_seq_len)},   {"mlp_ratio", set(m.mlp_ratio)},
               {"theta_base", set(m.theta_base)},     {"embed_std", set(m.embed_std)},
               {"init_std", set(m.init_std)}});
    };
    sections["data"] = [&](const json& v) {
        DataConfig& d = run.data;
        apply(v, "data",
              {{"train_size", set(d.train_size)},
               {"val_size", set(d.val_size)},
               {"min_objects", set(d.objects.min_objects)},
               {"max_objects", set(d.objects.max_objects)}});
    };
    sections["train"] = [&](const json& v) {
        TrainOptions& t = run.train;
        apply(v, "train",
              {{"batch_size", set(t.batch_size)},
               {"encoder_steps", set(t.encoder_steps)},
               {"encoder_lr", set(t.encoder_lr)},
               {"objectness_weight", set(t.objectness_weight)},
               {"decoder_steps", set(t.decoder_steps)},
               {"decoder_lr", set(t.decoder_lr)},
               {"warmup_steps", set(t.warmup_steps)},
               {"attention_dropout", set(t.attention_dropout)},
               {"shuffle_encoder_positions", set(t.shuffle_encoder_positions)},
               {"log_every", set(t.log_every)}});
    };
    sections["sweep"] = [&](const json& v) {
        SweepConfig& s = run.sweep;
        apply(v, "sweep",
              {{"strategies", set_strategies(s.strategies)},
               {"ratios", set(s.ratios)},
               {"alignments", set_alignments(s.alignments)},
               {"measure_ttft", set(s.measure_ttft)},
               {"ttft_warmup", set(s.ttft_warmup)},
               {"ttft_runs", set(s.ttft_runs)},
               {"ttft_sample", set(s.ttft_sample)}});
    };
    sections["probe"] = [&](const json& v) {
        ProbeConfig& p = run.probe;
        apply(v, "probe",
              {{"images", set(p.images)},
               {"epochs", set(p.epochs)},
               {"lr", set(p.lr)},
               {"train_fraction", set(p.train_fraction)}});
    };
    sections["seeds"] = [&](const json& v) {
        SeedConfig& s = run.seeds;
        apply(v, "seeds",
              {{"data", set(s.data)}, {"train", set(s.train)}, {"eval", set(s.eval)}, {"probe", set(s.probe)}});
    };
    sections["paths"] = [&](const json& v) {
        PathConfig& p = run.paths;
        apply(v, "paths",
              {{"output_dir", set(p.output_dir)},
               {"checkpoint", set(p.checkpoint)},
               {"dataset", set(p.dataset)}});
    };
    apply(j, "config", sections);
    run.validate();
    return run;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& run) {
    nlohmann::ordered_json j;
    const ModelConfig& m = run.model;
    j["model"] = {{"grid_size", m.grid_size},       {"num_colors", m.num_colors},
                  {"d_model", m.d_model},           {"num_heads", m.num_heads},
                  {"head_dim", m.head_dim},         {"encoder_layers", m.encoder_layers},
                  {"decoder_layers", m.decoder_layers}, {"vocab_size", m.vocab_size},
                  {"max_seq_len", m.max_seq_len},   {"mlp_ratio", m.mlp_ratio},
                  {"theta_base", m.theta_base},     {"embed_std", m.embed_std},
                  {"init_std", m.init_std}};
    j["data"] = {{"train_size", run.data.train_size},
                 {"val_size", run.data.val_size},
                 {"min_objects", run.data.objects.min_objects},
                 {"max_objects", run.data.objects.max_objects}};
    const TrainOptions& t = run.train;
    j["train"] = {{"batch_size", t.batch_size},
                  {"encoder_steps", t.encoder_steps},
                  {"encoder_lr", t.encoder_lr},
                  {"objectness_weight", t.objectness_weight},
                  {"decoder_steps", t.decoder_steps},
                  {"decoder_lr", t.decoder_lr},
                  {"warmup_steps", t.warmup_steps},
                  {"attention_dropout", t.attention_dropout},
                  {"shuffle_encoder_positions", t.shuffle_encoder_positions},
                  {"log_every", t.log_every}};
    std::vector<std::string> strategies;
    for (Strategy s : run.sweep.strategies) {
        strategies.emplace_back(to_string(s));
    }
    std::vector<std::string> alignments;
    for (Alignment a : run.sweep.alignments) {
        alignments.emplace_back(to_string(a));
    }
    j["sweep"] = {{"strategies", strategies},
                  {"ratios", run.sweep.ratios},
                  {"alignments", alignments},
                  {"measure_ttft", run.sweep.measure_ttft},
                  {"ttft_warmup", run.sweep.ttft_warmup},
                  {"ttft_runs", run.sweep.ttft_runs},
                  {"ttft_sample", run.sweep.ttft_sample}};
    j["probe"] = {{"images", run.probe.images},
                  {"epochs", run.probe.epochs},
                  {"lr", run.probe.lr},
                  {"train_fraction", run.probe.train_fraction}};
    j["seeds"] = {{"data", run.seeds.data},
                  {"train", run.seeds.train},
                  {"eval", run.seeds.eval},
                  {"probe", run.seeds.probe}};
    j["paths"] = {{"output_dir", run.paths.output_dir},
                  {"checkpoint", run.paths.checkpoint},
                  {"dataset", run.paths.dataset}};
    return j;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace gapprune

// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "gapprune/errors.hpp"

namespace gapprune {

std::vector<RecExample> generate_dataset(std::size_t count, const ModelConfig& cfg, Rng& rng,
                                         const DatasetOptions& options) {
    cfg.validate();
    const int n = cfg.num_visual();
    const int max_possible = std::min(n, cfg.num_colors - 1);
    if (options.min_objects < 1 || options.max_objects < options.min_objects ||
        options.max_objects > max_possible) {
        throw ConfigError("object count range [" + std::to_string(options.min_objects) + ", " +
                          std::to_string(options.max_objects) + "] must lie within [1, " +
                          std::to_string(max_possible) + "]");
    }
    std::vector<int> cells(static_cast<std::size_t>(n));
    std::vector<int> colors(static_cast<std::size_t>(cfg.num_colors - 1));
    std::vector<RecExample> out;
    out.reserve(count);
    for (std::size_t e = 0; e < count; ++e) {
        const auto span = static_cast<std::uint64_t>(options.max_objects - options.min_objects + 1);
        const int objects = options.min_objects + static_cast<int>(rng.below(span));
        std::iota(cells.begin(), cells.end(), 0);
        std::iota(colors.begin(), colors.end(), 1);
        rng.shuffle(cells);
        rng.shuffle(colors);
        RecExample ex;
        ex.image.assign(static_cast<std::size_t>(n), 0);
        for (int o = 0; o < objects; ++o) {
            ex.image[static_cast<std::size_t>(cells[o])] = colors[o];
        }
        const auto target = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(objects)));
        ex.query_color = colors[target];
        ex.answer_cell = cells[target];
        out.push_back(std::move(ex));
    }
    return out;
}

void validate_example(const RecExample& ex, const ModelConfig& cfg) {
    validate_image(ex.image, cfg);
    if (ex.query_color <= 0 || ex.query_color >= cfg.num_colors) {
        throw InputError("query colour must be a non-background colour");
    }
    if (ex.answer_cell < 0 || ex.answer_cell >= cfg.num_visual()) {
        throw InputError("answer cell out of range");
    }
    const auto hits = std::count(ex.image.begin(), ex.image.end(), ex.query_color);
    if (hits != 1 || ex.image[static_cast<std::size_t>(ex.answer_cell)] != ex.query_color) {
        throw InputError("query colour must occupy exactly the answer cell");
    }
}

std::vector<int> prompt_tokens(const RecExample& ex) { return {ex.query_color}; }

void write_dataset(const std::string& path, const std::vector<RecExample>& examples) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw InputError("cannot write dataset " + path);
    }
    for (const auto& ex : examples) {
        nlohmann::ordered_json j;
        j["image"] = ex.image;
        j["query_color"] = ex.query_color;
        j["answer_cell"] = ex.answer_cell;
        out << j.dump() << '\n';
    }
}

std::vector<RecExample> read_dataset(const std::string& path, const ModelConfig& cfg) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open dataset " + path);
    }
    std::vector<RecExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            RecExample ex;
            ex.image = j.at("image").get<std::vector<int>>();
            ex.query_color = j.at("query_color").get<int>();
            ex.answer_cell = j.at("answer_cell").get<int>();
            validate_example(ex, cfg);
            out.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& err) {
            throw InputError(path + ":" + std::to_string(line_no) + ": " + err.what());
        } catch (const InputError& err) {
            throw InputError(path + ":" + std::to_string(line_no) + ": " + err.what());
        }
    }
    return out;
}

}  // namespace gapprune

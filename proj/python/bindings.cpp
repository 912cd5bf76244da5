// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "gapprune/checkpoint.hpp"
#include "gapprune/cli.hpp"
#include "gapprune/config.hpp"
#include "gapprune/dataset.hpp"
#include "gapprune/efficiency.hpp"
#include "gapprune/errors.hpp"
#include "gapprune/evaluate.hpp"
#include "gapprune/pruning.hpp"
#include "gapprune/rope.hpp"

namespace py = pybind11;
using namespace gapprune;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) {
        throw ShapeError("expected a 2-D array");
    }
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Visual-token pruning with position-id realignment";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

    py::enum_<Strategy>(m, "Strategy")
        .value("none", Strategy::none)
        .value("cls_visual", Strategy::cls_visual)
        .value("text_visual", Strategy::text_visual)
        .value("random", Strategy::random)
        .value("spatial", Strategy::spatial);
    py::enum_<Alignment>(m, "Alignment")
        .value("gap", Alignment::gap)
        .value("shifted", Alignment::shifted)
        .value("permuted", Alignment::permuted);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("grid_size", &ModelConfig::grid_size)
        .def_readwrite("num_colors", &ModelConfig::num_colors)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("head_dim", &ModelConfig::head_dim)
        .def_readwrite("encoder_layers", &ModelConfig::encoder_layers)
        .def_readwrite("decoder_layers", &ModelConfig::decoder_layers)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("theta_base", &ModelConfig::theta_base)
        .def_property_readonly("num_visual", &ModelConfig::num_visual)
        .def("validate", &ModelConfig::validate);

    py::class_<RopeConfig>(m, "RopeConfig")
        .def(py::init([](int head_dim, double theta_base, int num_heads) {
                 return RopeConfig{head_dim, theta_base, num_heads};
             }),
             py::arg("head_dim") = 8, py::arg("theta_base") = 10000.0, py::arg("num_heads") = 1)
        .def_readwrite("head_dim", &RopeConfig::head_dim)
        .def_readwrite("theta_base", &RopeConfig::theta_base)
        .def_readwrite("num_heads", &RopeConfig::num_heads);

    py::class_<RecExample>(m, "RecExample")
        .def_readonly("image", &RecExample::image)
        .def_readonly("query_color", &RecExample::query_color)
        .def_readonly("answer_cell", &RecExample::answer_cell);

    m.def("sequential_ids", &sequential_ids, py::arg("start"), py::arg("count"));
    m.def(
        "apply_rope",
        [](const Array& x, const PositionIds& ids, const RopeConfig& cfg) {
            return to_array(apply_rope(to_matrix(x), ids, cfg));
        },
        py::arg("x"), py::arg("ids"), py::arg("cfg") = RopeConfig{});
    m.def(
        "rope_logit",
        [](const std::vector<double>& q, const std::vector<double>& k, std::int64_t mpos, std::int64_t npos,
           const RopeConfig& cfg) { return rope_logit(q, k, mpos, npos, cfg); },
        py::arg("q"), py::arg("k"), py::arg("m"), py::arg("n"), py::arg("cfg") = RopeConfig{});

    m.def("retained_count", &retained_count, py::arg("n"), py::arg("ratio"));
    m.def(
        "topk_select", [](const std::vector<double>& s, std::size_t k) { return topk_select(s, k); },
        py::arg("scores"), py::arg("k"));
    m.def("select_spatial", &select_spatial, py::arg("n"), py::arg("ratio"));
    m.def(
        "align_gap",
        [](const std::vector<std::size_t>& idx, std::int64_t base) { return align_gap(idx, base); },
        py::arg("indices"), py::arg("visual_base") = 0);
    m.def(
        "align_shifted",
        [](const std::vector<std::size_t>& idx, std::int64_t base) { return align_shifted(idx, base); },
        py::arg("indices"), py::arg("visual_base") = 0);
    m.def(
        "score_cls_visual",
        [](const std::vector<double>& q, const Array& keys, std::size_t d_k) {
            return score_cls_visual(q, to_matrix(keys), d_k);
        },
        py::arg("cls_query"), py::arg("keys"), py::arg("d_k"));
    m.def(
        "score_text_visual",
        [](const Array& queries, const Array& keys, std::size_t d_k) {
            return score_text_visual(to_matrix(queries), to_matrix(keys), d_k);
        },
        py::arg("text_queries"), py::arg("visual_keys"), py::arg("d_k"));
    m.def(
        "permute_by_score",
        [](const Array& v, const std::vector<double>& s) {
            Permuted p = permute_by_score(to_matrix(v), s);
            return py::make_tuple(to_array(p.tokens), p.ids, p.order);
        },
        py::arg("v"), py::arg("scores"));

    m.def(
        "generate_dataset",
        [](std::size_t count, const ModelConfig& cfg, std::uint64_t seed, int min_objects, int max_objects) {
            Rng rng(seed);
            return generate_dataset(count, cfg, rng, DatasetOptions{min_objects, max_objects});
        },
        py::arg("count"), py::arg("cfg") = ModelConfig{}, py::arg("seed") = 0, py::arg("min_objects") = 1,
        py::arg("max_objects") = 6);
    m.def("estimate_flops", &estimate_flops, py::arg("cfg"), py::arg("seq_len"));

    m.def(
        "evaluate_checkpoint",
        [](const std::string& path, const std::vector<RecExample>& examples, Strategy strategy, double ratio,
           Alignment alignment, std::uint64_t seed) {
            const Checkpoint ck = load_checkpoint(path);
            py::gil_scoped_release release;
            return evaluate(ck.weights, ck.config, examples, EvalSetting{strategy, ratio, alignment}, seed);
        },
        py::arg("checkpoint"), py::arg("examples"), py::arg("strategy") = Strategy::none,
        py::arg("ratio") = 1.0, py::arg("alignment") = Alignment::gap, py::arg("seed") = 0);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            std::ostringstream err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line interface; returns (exit_code, stdout, stderr).");
}

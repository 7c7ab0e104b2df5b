#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <filesystem>

#include "palsyfuse/error.hpp"
#include "palsyfuse/evaluation.hpp"
#include "palsyfuse/fusion.hpp"
#include "palsyfuse/geometry.hpp"
#include "palsyfuse/io.hpp"
#include "palsyfuse/rasterizer.hpp"
#include "palsyfuse/synthgen.hpp"

namespace py = pybind11;
using namespace palsyfuse;

namespace {

std::vector<BinaryLabel> to_labels(const std::vector<int>& v) {
    std::vector<BinaryLabel> out;
    out.reserve(v.size());
    for (int x : v) {
        if (x != 0 && x != 1) throw ConfigError("labels must be 0 or 1, got " + std::to_string(x));
        out.push_back(x ? BinaryLabel::Palsy : BinaryLabel::NoPalsy);
    }
    return out;
}

py::array_t<std::uint8_t> to_array(const ImageBuffer& img) {
    std::vector<py::ssize_t> shape{img.height, img.width};
    if (img.channels > 1) shape.push_back(img.channels);
    py::array_t<std::uint8_t> out(shape);
    std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size());
    return out;
}

py::array_t<double> to_matrix(const std::vector<FeatureVector>& rows, std::size_t width) {
    py::array_t<double> out({static_cast<py::ssize_t>(rows.size()), static_cast<py::ssize_t>(width)});
    auto m = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) m(i, j) = rows[i].values[j];
    }
    return out;
}

// Frames travel across the boundary as JSONL text, the on-disk format.
std::vector<LandmarkFrame> frames_of(const std::string& jsonl) { return io::parse_frames(jsonl); }

std::string jsonl_of(const std::vector<LandmarkFrame>& frames) {
    std::string out;
    for (const auto& f : frames) out += io::serialize_frame(f) + "\n";
    return out;
}

}  // namespace

PYBIND11_MODULE(_palsyfuse, m) {
    m.doc() = "Facial palsy detection core: features, rendering, metrics, fusion and LOPO evaluation.";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    py::class_<evaluation::MetricsRecord>(m, "Metrics")
        .def_readonly("tp", &evaluation::MetricsRecord::tp)
        .def_readonly("fp", &evaluation::MetricsRecord::fp)
        .def_readonly("fn", &evaluation::MetricsRecord::fn)
        .def_readonly("tn", &evaluation::MetricsRecord::tn)
        .def_readonly("precision", &evaluation::MetricsRecord::precision)
        .def_readonly("recall", &evaluation::MetricsRecord::recall)
        .def_readonly("f1", &evaluation::MetricsRecord::f1)
        .def("__repr__", [](const evaluation::MetricsRecord& r) {
            return "Metrics(tp=" + std::to_string(r.tp) + ", fp=" + std::to_string(r.fp) + ", fn=" +
                   std::to_string(r.fn) + ", tn=" + std::to_string(r.tn) + ", f1=" + io::format_number(r.f1) + ")";
        });

    m.def(
        "compute_metrics",
        [](const std::vector<int>& predicted, const std::vector<int>& truth) {
            return evaluation::compute_metrics(to_labels(predicted), to_labels(truth));
        },
        py::arg("predicted"), py::arg("truth"));

    m.def(
        "synth_cohort",
        [](std::size_t palsy, std::size_t healthy, std::size_t frames, double jitter, std::uint64_t seed) {
            synth::CohortSpec c;
            c.palsy_subjects = palsy;
            c.healthy_subjects = healthy;
            c.frames_per_subject = frames;
            c.jitter_sigma = jitter;
            c.seed = seed;
            return jsonl_of(synth::generate_cohort(c));
        },
        py::arg("palsy_subjects") = 10, py::arg("healthy_subjects") = 40, py::arg("frames_per_subject") = 50,
        py::arg("jitter_sigma") = 0.01, py::arg("seed") = 42, "Synthetic cohort as frames JSONL text.");

    m.def(
        "handcrafted_features",
        [](const std::string& jsonl) {
            std::vector<FeatureVector> rows;
            for (const auto& f : frames_of(jsonl)) rows.push_back(geometry::handcrafted29(f, geometry::default_role_map()));
            return to_matrix(rows, kHandcraftedCount);
        },
        py::arg("frames_jsonl"), "Handcrafted asymmetry features, one row of 29 per frame.");

    m.def(
        "render_line_segments",
        [](const std::string& frame_json, int size) {
            return to_array(raster::render_line_segments(io::parse_frame(frame_json), raster::default_contours(), size,
                                                         size));
        },
        py::arg("frame_json"), py::arg("size") = 64);

    m.def(
        "round_robin_sample",
        [](const std::vector<int>& class_keys, std::size_t n, std::uint64_t seed) {
            std::vector<evaluation::SampleKey> keys;
            for (std::size_t i = 0; i < class_keys.size(); ++i) {
                char id[24];
                std::snprintf(id, sizeof id, "%012zu", i);
                keys.push_back({id, class_keys[i]});
            }
            return evaluation::round_robin_sample(keys, n, seed);
        },
        py::arg("class_keys"), py::arg("n"), py::arg("seed") = 0,
        "Indices of n frames drawn round-robin across class keys.");

    m.def(
        "late_fuse",
        [](const std::vector<double>& a, const std::vector<double>& b) { return fusion::late_fuse(a, b); },
        py::arg("a"), py::arg("b"));
    m.def("decide", [](double p) { return fusion::decide(p) == BinaryLabel::Palsy ? 1 : 0; }, py::arg("p"));

    m.def(
        "run_experiment",
        [](const std::string& config_path, std::size_t threads) {
            const auto config = evaluation::load_run_config(config_path);
            evaluation::RunOptions opt;
            opt.threads = threads;
            evaluation::RunReport report;
            {
                py::gil_scoped_release release;
                report = evaluation::run_experiment(config, opt);
            }
            return evaluation::report_to_json(report);
        },
        py::arg("config_path"), py::arg("threads") = 1, "Runs a LOPO experiment and returns report JSON text.");

    m.def(
        "report_to_markdown",
        [](const std::string& report_json) {
            return evaluation::report_to_markdown(evaluation::report_from_json(report_json));
        },
        py::arg("report_json"));
}

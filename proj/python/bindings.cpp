// Python bindings: the detector/aggregation primitives on numpy arrays plus a
// config-in, arrays-out experiment driver. File formats and the full round
// protocol live in the C++ library; this is a thin view for analysis work.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/attack.hpp"
#include "fedsim/config.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/detector.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/report.hpp"
#include "fedsim/simulator.hpp"
#include "fedsim/version.hpp"

namespace py = pybind11;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<fedsim::ParamVector> vectors_from_rows(const DoubleArray& a) {
    if (a.ndim() != 2) throw fedsim::InputError("expected a 2-D array (one row per agent)");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    std::vector<fedsim::ParamVector> out;
    out.reserve(rows);
    const double* p = a.data();
    for (std::size_t i = 0; i < rows; ++i) {
        out.emplace_back(std::vector<double>(p + i * cols, p + (i + 1) * cols));
    }
    return out;
}

py::array_t<double> row_from_vector(const fedsim::ParamVector& v) {
    // Shape + pointer form (copies). The 1-D count constructor in pybind11
    // 3.0 forwards an empty strides container and yields a zero-stride array.
    const std::vector<py::ssize_t> shape = {static_cast<py::ssize_t>(v.dim())};
    return py::array_t<double>(shape, v.data());
}

fedsim::MixingSchedule schedule_from_args(const std::string& kind, int start_round,
                                          const std::vector<double>& table) {
    fedsim::MixingSchedule s;
    if (kind == "inverse-sqrt") {
        s.kind = fedsim::ScheduleKind::kInverseSqrt;
    } else if (kind == "step") {
        s.kind = fedsim::ScheduleKind::kStepAt;
        s.start_round = start_round;
    } else if (kind == "constant-zero") {
        s.kind = fedsim::ScheduleKind::kConstantZero;
    } else if (kind == "table") {
        s.kind = fedsim::ScheduleKind::kTable;
        s.table = table;
    } else {
        throw fedsim::ConfigError("unknown schedule kind: \"" + kind +
                                  "\" (inverse-sqrt, step, constant-zero, table)");
    }
    s.validate();
    return s;
}

/// Config holder passed between parse/run/write; immutable except via JSON.
struct ConfigHandle {
    fedsim::ExperimentConfig config;
};

/// Experiment output with the per-round series flattened to numpy arrays.
struct ResultHandle {
    fedsim::ExperimentResult raw;

    py::array_t<double> test_error() const {
        const auto reps = static_cast<py::ssize_t>(raw.replications.size());
        const auto rounds =
            static_cast<py::ssize_t>(reps > 0 ? raw.replications[0].rounds.size() : 0);
        py::array_t<double> out({reps, rounds});
        auto view = out.mutable_unchecked<2>();
        for (py::ssize_t r = 0; r < reps; ++r)
            for (py::ssize_t t = 0; t < rounds; ++t)
                view(r, t) = raw.replications[r].rounds[t].test_error;
        return out;
    }

    py::array_t<int> flip_success() const {
        const auto reps = static_cast<py::ssize_t>(raw.replications.size());
        const auto rounds =
            static_cast<py::ssize_t>(reps > 0 ? raw.replications[0].rounds.size() : 0);
        py::array_t<int> out({reps, rounds});
        auto view = out.mutable_unchecked<2>();
        for (py::ssize_t r = 0; r < reps; ++r)
            for (py::ssize_t t = 0; t < rounds; ++t)
                view(r, t) = raw.replications[r].rounds[t].flip_success;
        return out;
    }

    py::array_t<int> permanently_ignored_from() const {
        const auto reps = static_cast<py::ssize_t>(raw.replications.size());
        const auto agents = static_cast<py::ssize_t>(
            reps > 0 ? raw.replications[0].timeline.permanently_ignored_from.size() : 0);
        py::array_t<int> out({reps, agents});
        auto view = out.mutable_unchecked<2>();
        for (py::ssize_t r = 0; r < reps; ++r)
            for (py::ssize_t j = 0; j < agents; ++j)
                view(r, j) = raw.replications[r].timeline.permanently_ignored_from[j];
        return out;
    }

    std::vector<double> thresholds() const {
        std::vector<double> out;
        out.reserve(raw.replications.size());
        for (const auto& rep : raw.replications) out.push_back(rep.threshold_used);
        return out;
    }

    std::vector<std::uint64_t> seeds() const {
        std::vector<std::uint64_t> out;
        out.reserve(raw.replications.size());
        for (const auto& rep : raw.replications) out.push_back(rep.seed);
        return out;
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Federated-learning data-injection attack and detection simulator";
    m.attr("__version__") = fedsim::kVersion;

    py::register_exception<fedsim::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<fedsim::InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<fedsim::ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<fedsim::ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);
    py::register_exception<fedsim::IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "mixing_weight",
        [](const std::string& kind, int t, int start_round, const std::vector<double>& table) {
            return fedsim::mixing_weight(schedule_from_args(kind, start_round, table), t);
        },
        py::arg("kind"), py::arg("t"), py::arg("start_round") = 0,
        py::arg("table") = std::vector<double>{},
        "Attack mixing weight g(t) for a schedule given by kind "
        "(inverse-sqrt | step | constant-zero | table).");

    m.def(
        "coordinatewise_median",
        [](const DoubleArray& rows) {
            return row_from_vector(fedsim::coordinatewise_median(vectors_from_rows(rows)));
        },
        py::arg("vectors"), "Per-coordinate median over the rows of a 2-D array.");

    m.def(
        "round_statistic",
        [](const DoubleArray& deltas, const std::optional<std::vector<bool>>& pool) {
            return fedsim::round_statistic(vectors_from_rows(deltas),
                                           pool ? &*pool : nullptr);
        },
        py::arg("deltas"), py::arg("pool") = std::nullopt,
        "Per-agent deviation statistic: sup-norm distance of each row from the "
        "coordinatewise median of the other rows (optionally restricted to a pool).");

    m.def("threshold_decision", &fedsim::threshold_decision, py::arg("interval_mean"),
          py::arg("threshold"), py::arg("num_agents"),
          "1 if interval_mean > threshold * sqrt(num_agents), else 0.");

    m.def(
        "majority_trust",
        [](const std::vector<int>& decisions, bool previous) {
            return fedsim::majority_trust(decisions, previous);
        },
        py::arg("decisions"), py::arg("previous"),
        "Trust flag from the full decision history: mean > 1/2 ignored, < 1/2 "
        "trusted, exactly 1/2 keeps the previous flag.");

    m.def(
        "aggregate",
        [](const DoubleArray& updates, const std::vector<bool>& trusted,
           const std::optional<std::vector<double>>& weights) {
            std::vector<fedsim::ParamVector> rows = vectors_from_rows(updates);
            std::vector<double> w;
            if (weights) {
                w = *weights;
            } else {
                w.assign(rows.size(), rows.empty() ? 1.0 : 1.0 / static_cast<double>(rows.size()));
            }
            return row_from_vector(fedsim::aggregate(rows, trusted, w));
        },
        py::arg("updates"), py::arg("trusted"), py::arg("weights") = std::nullopt,
        "Weighted mean of the trusted rows, weights renormalized over the trusted set.");

    m.def("nearest_rank_quantile", &fedsim::nearest_rank_quantile, py::arg("values"),
          py::arg("p"), "Nearest-rank quantile: the ceil(p*n)-th smallest value.");

    m.def("default_flip_table", &fedsim::default_flip_table,
          "The 10-class label permutation used by the stock label-flip scenario.");

    m.def(
        "load_idx",
        [](const std::string& images_path, const std::string& labels_path) {
            fedsim::LabeledDataset data = fedsim::load_idx(images_path, labels_path);
            const auto n = static_cast<py::ssize_t>(data.size());
            const auto d = static_cast<py::ssize_t>(data.feature_dim());
            py::array_t<double> features({n, d});
            std::memcpy(features.mutable_data(), data.raw_features().data(),
                        data.raw_features().size() * sizeof(double));
            const std::vector<py::ssize_t> label_shape = {n};
            py::array_t<int> labels(label_shape, data.labels().data());
            return py::make_tuple(features, labels);
        },
        py::arg("images_path"), py::arg("labels_path"),
        "Reads an IDX image/label pair; returns (features [n, d] in [0,1], labels [n]).");

    py::class_<ConfigHandle>(m, "Config", "Validated experiment configuration.")
        .def_static(
            "from_file",
            [](const std::string& path) { return ConfigHandle{fedsim::parse_config(path)}; },
            py::arg("path"))
        .def_static(
            "from_json",
            [](const std::string& text) {
                nlohmann::ordered_json doc;
                try {
                    doc = nlohmann::ordered_json::parse(text);
                } catch (const nlohmann::ordered_json::parse_error& e) {
                    throw fedsim::ParseError(std::string("config: ") + e.what());
                }
                return ConfigHandle{fedsim::config_from_json(doc)};
            },
            py::arg("text"))
        .def("to_json",
             [](const ConfigHandle& c) { return fedsim::config_to_json(c.config).dump(2) + "\n"; })
        .def_property_readonly("num_agents",
                               [](const ConfigHandle& c) { return c.config.num_agents; })
        .def_property_readonly("rounds", [](const ConfigHandle& c) { return c.config.rounds; })
        .def_property_readonly("replications",
                               [](const ConfigHandle& c) { return c.config.replications; })
        .def_property_readonly("master_seed",
                               [](const ConfigHandle& c) { return c.config.master_seed; })
        .def_property_readonly("detection_enabled",
                               [](const ConfigHandle& c) { return c.config.detection.enabled; })
        .def("__repr__", [](const ConfigHandle& c) {
            return "<fedsim.Config agents=" + std::to_string(c.config.num_agents) +
                   " rounds=" + std::to_string(c.config.rounds) +
                   " replications=" + std::to_string(c.config.replications) + ">";
        });

    py::class_<ResultHandle>(m, "RunResult", "Completed experiment, per-round series as arrays.")
        .def_property_readonly("test_error", &ResultHandle::test_error,
                               "Test error, shape (replications, rounds).")
        .def_property_readonly("flip_success", &ResultHandle::flip_success,
                               "Flip-success count, shape (replications, rounds).")
        .def_property_readonly("permanently_ignored_from", &ResultHandle::permanently_ignored_from,
                               "First interval of the final ignored stretch per agent "
                               "(0 = trusted at the end), shape (replications, agents).")
        .def_property_readonly("thresholds", &ResultHandle::thresholds,
                               "Detection threshold used, one per replication.")
        .def_property_readonly("seeds", &ResultHandle::seeds, "Replication seeds.")
        .def_property_readonly("q10", [](const ResultHandle& r) { return r.raw.q10; })
        .def_property_readonly("q50", [](const ResultHandle& r) { return r.raw.q50; })
        .def_property_readonly("q90", [](const ResultHandle& r) { return r.raw.q90; })
        .def("__repr__", [](const ResultHandle& r) {
            return "<fedsim.RunResult replications=" + std::to_string(r.raw.replications.size()) +
                   ">";
        });

    m.def(
        "run",
        [](const ConfigHandle& config) {
            return ResultHandle{fedsim::run_replications(config.config)};
        },
        py::arg("config"), py::call_guard<py::gil_scoped_release>(),
        "Runs every replication and returns the collected series.");

    m.def(
        "write_results",
        [](const ResultHandle& result, const ConfigHandle& config, const std::string& out_dir) {
            fedsim::emit_results(result.raw, fedsim::RunManifest{config.config, out_dir});
        },
        py::arg("result"), py::arg("config"), py::arg("out_dir"),
        "Writes rounds.csv, detector.csv, quantiles.csv and manifest.json.");
}

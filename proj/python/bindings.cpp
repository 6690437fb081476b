#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "ekisub/cli_harness.hpp"
#include "ekisub/diagnostics.hpp"
#include "ekisub/errors.hpp"
#include "ekisub/subsampling.hpp"

namespace py = pybind11;
using namespace ekisub;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

GreyImage grey_from_array(const U8Array& a) {
    if (a.ndim() != 2) throw InvalidInput("expected a 2-D uint8 array");
    GreyImage g(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    std::memcpy(g.data.data(), a.data(), g.data.size());
    return g;
}

py::array_t<std::uint8_t> array_from_grey(const GreyImage& g) {
    py::array_t<std::uint8_t> out({g.height, g.width});
    std::memcpy(out.mutable_data(), g.data.data(), g.data.size());
    return out;
}

py::array_t<double> array_from_distance(const DistanceMap& d) {
    py::array_t<double> out({d.height, d.width});
    std::memcpy(out.mutable_data(), d.values.data(), d.values.size() * sizeof(double));
    return out;
}

TimeSeries series_from(std::vector<double> t, std::vector<double> v) {
    if (t.size() != v.size()) throw InvalidInput("time and value lengths differ");
    return TimeSeries{std::move(t), std::move(v)};
}

py::dict fit_dict(const RateFit& f) {
    py::dict d;
    d["slope"] = f.slope;
    d["intercept"] = f.intercept;
    d["r_squared"] = f.r_squared;
    d["t_lo"] = f.t_lo;
    d["t_hi"] = f.t_hi;
    d["samples"] = f.samples;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Continuous-time ensemble Kalman inversion with data subsampling";
    m.attr("__version__") = kVersion;

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<DegenerateInput>(m, "DegenerateInput", base.ptr());
    py::register_exception<FitError>(m, "FitError", base.ptr());
    py::register_exception<ComparisonError>(m, "ComparisonError", base.ptr());
    auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<StiffnessError>(m, "StiffnessError", numerical.ptr());
    auto evaluation = py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", evaluation.ptr());
    py::register_exception<SolverDivergence>(m, "SolverDivergence", evaluation.ptr());

    // Imaging.
    py::enum_<Metric>(m, "Metric").value("euclidean", Metric::euclidean).value("manhattan", Metric::manhattan);
    m.def("parse_metric", &parse_metric);
    m.def(
        "to_grey",
        [](const U8Array& rgb) {
            if (rgb.ndim() != 3 || rgb.shape(2) != 3) throw InvalidInput("expected an (H, W, 3) uint8 array");
            RgbImage img(static_cast<int>(rgb.shape(1)), static_cast<int>(rgb.shape(0)));
            std::memcpy(img.data.data(), rgb.data(), img.data.size());
            return array_from_grey(to_grey(img));
        },
        py::arg("rgb"));
    m.def(
        "threshold", [](const U8Array& grey, int sigma) { return array_from_grey(threshold(grey_from_array(grey), sigma)); },
        py::arg("grey"), py::arg("sigma"));
    m.def(
        "distance_transform",
        [](const U8Array& binary, Metric metric, unsigned workers) {
            BinaryImage b;
            static_cast<GreyImage&>(b) = grey_from_array(binary);
            for (auto& v : b.data)
                if (v != 0) v = 255;
            return array_from_distance(distance_transform(b, metric, workers));
        },
        py::arg("binary"), py::arg("metric") = Metric::euclidean, py::arg("workers") = 1,
        "Distance of every pixel to the nearest zero pixel.");
    m.def("ingest", &ingest, py::arg("path"), py::arg("sigma"), py::arg("metric"), py::arg("expected_width") = 0,
          py::arg("expected_height") = 0);

    // Problems and flows.
    py::class_<InverseProblem>(m, "InverseProblem")
        .def_property_readonly("dim_u", &InverseProblem::dim_u)
        .def_property_readonly("dim_y", &InverseProblem::dim_y)
        .def_property_readonly("data", [](const InverseProblem& p) { return p.data(); })
        .def("evaluate", &InverseProblem::evaluate)
        .def("potential", [](const InverseProblem& p, const Eigen::VectorXd& u) { return potential(p, u); });
    m.def(
        "linear_problem",
        [](Eigen::MatrixXd a, Eigen::VectorXd y, std::optional<Eigen::VectorXd> noise_var, std::optional<Eigen::MatrixXd> d0,
           double alpha) {
            const Eigen::Index d = a.cols();
            NoiseModel noise = noise_var ? NoiseModel::diagonal(*noise_var) : NoiseModel::identity(y.size());
            PriorModel prior(d0 ? *d0 : Eigen::MatrixXd::Identity(d, d), alpha);
            return InverseProblem::linear(std::move(a), std::move(y), std::move(noise), std::move(prior));
        },
        py::arg("a"), py::arg("y"), py::arg("noise_var") = py::none(), py::arg("d0") = py::none(),
        py::arg("alpha") = 1.0, "Problem with G(u) = A u.");
    m.def("tikhonov_solution", &tikhonov_solution);

    py::enum_<FlowVariant>(m, "FlowVariant")
        .value("plain", FlowVariant::plain)
        .value("regularised", FlowVariant::regularised)
        .value("variance_inflated", FlowVariant::variance_inflated);

    py::class_<FlowConfig>(m, "FlowConfig")
        .def(py::init<>())
        .def_readwrite("variant", &FlowConfig::variant)
        .def_readwrite("rho_vi", &FlowConfig::rho_vi)
        .def_readwrite("t_end", &FlowConfig::t_end)
        .def_readwrite("rel_tol", &FlowConfig::rel_tol)
        .def_readwrite("abs_tol", &FlowConfig::abs_tol)
        .def_readwrite("min_step", &FlowConfig::min_step)
        .def_readwrite("first_sample", &FlowConfig::first_sample)
        .def_readwrite("samples_per_decade", &FlowConfig::samples_per_decade)
        .def_readwrite("record_residual", &FlowConfig::record_residual)
        .def_readwrite("workers", &FlowConfig::workers);

    py::class_<Trajectory>(m, "Trajectory")
        .def_property_readonly("times", &Trajectory::times)
        .def_property_readonly("particles",
                               [](const Trajectory& t) {
                                   std::vector<Eigen::MatrixXd> out;
                                   for (const auto& s : t.samples) out.push_back(s.particles);
                                   return out;
                               })
        .def_property_readonly("mean_residual",
                               [](const Trajectory& t) { return t.series(&TrajectorySample::mean_residual); })
        .def_property_readonly("spread", [](const Trajectory& t) { return t.series(&TrajectorySample::spread); })
        .def_property_readonly("lambda_min",
                               [](const Trajectory& t) { return t.series(&TrajectorySample::lambda_min); })
        .def_property_readonly("switches",
                               [](const Trajectory& t) {
                                   std::vector<std::pair<double, int>> out;
                                   for (const auto& s : t.switches) out.emplace_back(s.time, s.index);
                                   return out;
                               })
        .def_readonly("forward_evaluations", &Trajectory::forward_evaluations)
        .def_readonly("span_rank", &Trajectory::span_rank);

    m.def(
        "integrate",
        [](const Eigen::MatrixXd& particles, const InverseProblem& p, const FlowConfig& cfg) {
            return integrate(Ensemble(particles), p, cfg);
        },
        py::arg("particles"), py::arg("problem"), py::arg("config"),
        "Integrates the flow from a d x N_ens particle matrix.");

    // Subsampling.
    py::class_<LearningRateSchedule>(m, "LearningRateSchedule")
        .def(py::init<>())
        .def_readwrite("a", &LearningRateSchedule::a)
        .def_readwrite("b", &LearningRateSchedule::b)
        .def_readwrite("t_cutoff", &LearningRateSchedule::t_cutoff)
        .def_readwrite("n_post_switches", &LearningRateSchedule::n_post_switches)
        .def_readwrite("horizon", &LearningRateSchedule::horizon)
        .def("eta", &LearningRateSchedule::eta);
    m.def("transition_rate_matrix", &transition_rate_matrix);
    m.def("holding_time_survival", &holding_time_survival);
    m.def(
        "switch_times",
        [](int n_sub, const LearningRateSchedule& sched, std::uint64_t seed, double t) {
            IndexProcess proc(n_sub, sched, seed);
            proc.advance(t);
            std::vector<std::pair<double, int>> out{{0.0, proc.initial_index()}};
            for (const auto& s : proc.switch_log()) out.emplace_back(s.time, s.index);
            return out;
        },
        py::arg("n_sub"), py::arg("schedule"), py::arg("seed"), py::arg("t"),
        "(time, index) pairs of the index process on [0, t], starting with the initial index.");
    m.def(
        "integrate_subsampled",
        [](const Eigen::MatrixXd& particles, const InverseProblem& p, int n_sub, const FlowConfig& cfg,
           const LearningRateSchedule& sched, std::uint64_t seed) {
            const DataPartition part = partition(p, n_sub, PartitionScheme::contiguous_blocks);
            return integrate_subsampled(Ensemble(particles), part, cfg, sched, seed);
        },
        py::arg("particles"), py::arg("problem"), py::arg("n_sub"), py::arg("config"), py::arg("schedule"),
        py::arg("seed"), "Subsampled flow over contiguous blocks of the data.");

    // Diagnostics.
    m.def(
        "fit_power_law",
        [](std::vector<double> t, std::vector<double> v, double lo, double hi) {
            return fit_dict(fit_power_law(series_from(std::move(t), std::move(v)), lo, hi));
        },
        py::arg("t"), py::arg("values"), py::arg("t_lo"), py::arg("t_hi"));
    m.def(
        "compare_runs",
        [](std::vector<double> ta, std::vector<double> va, std::vector<double> tb, std::vector<double> vb) {
            const ComparisonReport r =
                compare_runs(series_from(std::move(ta), std::move(va)), series_from(std::move(tb), std::move(vb)));
            py::dict d;
            d["terminal_ratio"] = r.terminal_ratio;
            d["max_log_distance"] = r.max_log_distance;
            d["grid"] = r.grid;
            return d;
        },
        py::arg("t_a"), py::arg("values_a"), py::arg("t_b"), py::arg("values_b"));

    // Harness.
    m.def(
        "default_config", [] { return config_to_json_text(RunConfig::defaults()); }, "Default run config as JSON text.");
    m.def(
        "normalise_config", [](const std::string& text) { return config_to_json_text(config_from_json_text(text)); },
        "Parses and re-serialises a JSON config, filling in defaults.");
    m.def(
        "forward",
        [](const std::string& config_json, std::optional<Eigen::Vector2d> physical) {
            const RunConfig cfg = config_from_json_text(config_json);
            const ForwardResult r = run_forward(cfg, physical ? *physical : cfg.truth);
            return py::make_tuple(array_from_grey(r.binary), array_from_distance(r.distance), r.rod.centerline());
        },
        py::arg("config_json"), py::arg("physical") = py::none(),
        "Returns (binary image, distance map, centreline) for (density, modulus).");
    m.def(
        "run",
        [](const std::string& command, const std::string& config_json) {
            const RunConfig cfg = config_from_json_text(config_json);
            if (command == "forward") {
                cmd_forward(cfg);
                return py::object(py::none());
            }
            if (command == "invert" || command == "invert-sub") {
                const InversionResult r = command == "invert" ? cmd_invert(cfg) : cmd_invert_subsampled(cfg);
                py::dict d;
                d["estimate"] = r.estimate_physical;
                d["terminal_residual"] = r.terminal_residual;
                d["trajectory"] = r.trajectory;
                return py::object(d);
            }
            if (command == "diagnose") return py::object(py::str(cmd_diagnose(cfg)));
            throw ConfigError("unknown command: " + command);
        },
        py::arg("command"), py::arg("config_json"), "Runs a CLI command; artefacts go to the config's out directory.");
}

// Python bindings: experiment commands, tensor I/O and the verification metrics.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gap/commands.hpp"
#include "gap/dynamics.hpp"
#include "gap/error.hpp"
#include "gap/parallel.hpp"
#include "gap/verification.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

gap::ExperimentConfig parse_config(const std::string& text) { return gap::config_from_json(json::parse(text)); }

py::array_t<double> tensor_to_numpy(const gap::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> a(shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

gap::Tensor numpy_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    gap::Tensor t;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape.push_back(static_cast<std::uint64_t>(a.shape(i)));
    t.data.assign(a.data(), a.data() + a.size());
    return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "generative assimilation and prediction: native core";
    m.attr("__version__") = gap::kToolVersion;

    py::register_exception<gap::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<gap::InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<gap::IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<gap::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("command_names", &gap::command_names);
    m.def(
        "materialize_config", [](const std::string& text) { return gap::to_json(parse_config(text)).dump(); },
        py::arg("config_json"), "Strictly parse a JSON config and return it with every default filled in.");
    m.def(
        "config_hash", [](const std::string& text) { return gap::config_hash(parse_config(text)); }, py::arg("config_json"));
    m.def(
        "run_command",
        [](const std::string& name, const std::string& text, const std::string& out, bool quiet, const std::string& evaluate) {
            const auto cfg = parse_config(text);
            gap::CommandOptions o;
            o.out = out.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(out);
            o.quiet = quiet;
            o.evaluate = evaluate;
            gap::RunManifest r;
            {
                py::gil_scoped_release release;
                r = gap::run_command(name, cfg, o);
            }
            return r.doc.dump();
        },
        py::arg("name"), py::arg("config_json"), py::arg("out") = "", py::arg("quiet") = true,
        py::arg("evaluate") = "forecast", "Run one command; returns the manifest as JSON text.");
    m.def("set_num_threads", &gap::set_num_threads, py::arg("n"));
    m.def("num_threads", &gap::num_threads);

    m.def(
        "read_tensor", [](const std::filesystem::path& dir, const std::string& name) { return tensor_to_numpy(gap::read_tensor(dir, name)); },
        py::arg("dir"), py::arg("name"));
    m.def(
        "write_tensor",
        [](const std::filesystem::path& dir, const std::string& name, const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const std::string& role) { return gap::write_tensor(dir, name, numpy_to_tensor(a), role).sha256; },
        py::arg("dir"), py::arg("name"), py::arg("array"), py::arg("role") = "array");
    m.def(
        "sha256_hex", [](const py::bytes& b) { return gap::sha256_hex(std::string(b)); }, py::arg("data"));

    m.def(
        "lorenz96_run",
        [](int dim, double forcing, double dt, std::int64_t n_spinup, std::int64_t n, std::uint64_t seed) {
            const auto spec = gap::make_lorenz96(dim, forcing, dt, 2);
            return gap::Matrix(gap::generate_dataset(spec, n_spinup, n, 1, seed).states.transpose());
        },
        py::arg("dim") = 40, py::arg("forcing") = 8.0, py::arg("dt") = 0.05, py::arg("n_spinup") = 500, py::arg("n") = 1000,
        py::arg("seed") = 0, "Lorenz-96 truth run; rows are states.");

    m.def("rmse", py::overload_cast<const gap::StateVector&, const gap::StateVector&>(&gap::rmse));
    m.def("acc", py::overload_cast<const gap::StateVector&, const gap::StateVector&>(&gap::acc),
          "Anomaly correlation; None when either field is constant.");
    m.def(
        "crps", [](const std::vector<double>& members, double y) { return gap::crps(members, y); }, py::arg("members"),
        py::arg("truth"));
    m.def(
        "crps_field", [](const gap::Matrix& members, const gap::StateVector& y) { return gap::crps_field(members, y); },
        py::arg("members"), py::arg("truth"), "members: d x M");
    m.def("gaussian_crps", &gap::gaussian_crps, py::arg("mu"), py::arg("sigma"), py::arg("y"));
    m.def("spread_skill_ratio", &gap::spread_skill_ratio, py::arg("ensembles"), py::arg("truths"));
    m.def(
        "ks_two_sample",
        [](const std::vector<double>& x, const std::vector<double>& y) {
            const auto r = gap::ks_two_sample(x, y);
            return py::make_tuple(r.statistic, r.p_value);
        },
        py::arg("x"), py::arg("y"));
    m.def(
        "power_spectrum",
        [](const gap::StateVector& f) {
            const auto s = gap::power_spectrum(f);
            return py::make_tuple(s.energy, s.parseval_residual);
        },
        py::arg("field"));
}

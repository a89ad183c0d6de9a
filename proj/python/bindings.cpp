#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kvpsim/cli.hpp"
#include "kvpsim/config.hpp"
#include "kvpsim/kernelsim.hpp"
#include "kvpsim/kvlayout.hpp"
#include "kvpsim/metrics.hpp"

namespace py = pybind11;
using namespace kvpsim;

namespace {

// Scenario JSON + overrides -> metrics JSON string (parsed on the Python side).
std::string simulate(const std::string& scenario, const std::vector<std::string>& overrides) {
  const Scenario s = parse_scenario(scenario, overrides);
  SimReport report;
  {
    py::gil_scoped_release release;
    report = run_kernel(s);
  }
  return to_json(derive_metrics(report, s.hardware));
}

std::string capacity(const std::string& model, const std::string& hardware, std::uint64_t batch) {
  return to_json(capacity_report(preset_model(model), preset_hardware(hardware), batch));
}

py::tuple cli_main(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::main(args, out, err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_kvpsim, m) {
  m.doc() = "Paged-attention KV-cache prefetch simulator";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("simulate", &simulate, py::arg("scenario"), py::arg("overrides") = std::vector<std::string>{});
  m.def("capacity", &capacity, py::arg("model"), py::arg("hardware") = "h20", py::arg("batch") = 1);
  m.def("speedup", py::overload_cast<double, double>(&speedup), py::arg("baseline"), py::arg("optimized"));
  m.def("amdahl_e2e", &amdahl_e2e, py::arg("kernel_speedup"), py::arg("attention_fraction"));
  m.def("format_ratio", &format_ratio);
  m.def("model_presets", &model_preset_names);
  m.def("hardware_presets", &hardware_preset_names);
  m.def("cli", &cli_main, py::arg("args"));
}

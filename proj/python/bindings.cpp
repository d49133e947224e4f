#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ouroboros/genome.hpp"
#include "ouroboros/neuralcore.hpp"
#include "ouroboros/selection.hpp"
#include "ouroboros/telemetry.hpp"

namespace py = pybind11;
using namespace ouroboros;

namespace {

py::dict report_dict(const ValidationReport& r) {
  py::dict d;
  d["valid"] = r.valid();
  d["ended"] = r.ended;
  d["spawned"] = r.spawned;
  d["matured"] = r.matured;
  d["replicated"] = r.replicated;
  d["evicted"] = r.evicted;
  d["sterile"] = r.sterile;
  d["rejected"] = r.rejected;
  d["alive"] = r.alive;
  d["max_population"] = r.max_population;
  if (r.violation) {
    d["violation_seq"] = r.violation->seq;
    d["violation_kind"] = std::string(to_string(r.violation->kind));
    d["violation_detail"] = r.violation->detail;
  }
  return d;
}

std::vector<std::string> event_lines(const std::vector<Event>& events) {
  std::vector<std::string> out;
  out.reserve(events.size());
  for (const Event& e : events) out.push_back(event_to_line(e));
  return out;
}

}  // namespace

PYBIND11_MODULE(_ouroboros, m) {
  m.doc() = "Genome codec, gradient check and population simulator";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<InsufficientData>(m, "InsufficientData", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<Genome>(m, "Genome")
      .def(py::init([](double lr, int hid, int noi, int aux) { return Genome::from_values(lr, hid, noi, aux); }),
           py::arg("lr") = 0.001, py::arg("hid") = 16, py::arg("noi") = 8, py::arg("aux") = 8)
      .def_readonly("lr_micros", &Genome::lr_micros)
      .def_property_readonly("lr", &Genome::lr)
      .def_readonly("hid", &Genome::hid)
      .def_readonly("noi", &Genome::noi)
      .def_readonly("aux", &Genome::aux)
      .def("text", [](const Genome& g) { return serialize_genome(g); })
      .def_static("ancestor", &Genome::ancestor)
      .def(py::self == py::self)
      .def("__repr__", [](const Genome& g) {
        return "Genome(lr=" + std::to_string(g.lr()) + ", hid=" + std::to_string(g.hid) + ", noi=" +
               std::to_string(g.noi) + ", aux=" + std::to_string(g.aux) + ")";
      });

  m.def("parse_genome", [](const std::string& text) { return parse_genome(text); }, py::arg("text"));
  m.def("serialize_genome", &serialize_genome, py::arg("genome"));
  m.def(
      "mutate",
      [](const Genome& g, std::uint64_t seed, double sigma_lr, int int_delta) {
        std::mt19937_64 rng(seed);
        return mutate_genome(g, rng, MutationScales{sigma_lr, int_delta});
      },
      py::arg("genome"), py::arg("seed"), py::arg("sigma_lr") = 0.002, py::arg("int_delta") = 5);

  m.def(
      "gradient_check",
      [](int np, int hid, int aux, int noi, int length, std::uint64_t seed, double step, bool corrupt) {
        NetDims d;
        d.np = np;
        d.hid = hid;
        d.aux = aux;
        d.noi = noi;
        const auto r = gradient_check(d, length, seed, step, corrupt);
        py::dict out;
        out["parameters"] = r.parameters;
        out["max_rel_error"] = r.max_rel_error;
        out["worst_index"] = r.worst_index;
        return out;
      },
      py::arg("np") = 5, py::arg("hid") = 4, py::arg("aux") = 1, py::arg("noi") = 1, py::arg("length") = 6,
      py::arg("seed") = 1, py::arg("step") = 1e-5, py::arg("corrupt") = false);

  m.def(
      "cost_epoch", [](const Genome& g, int length) { return cost_epoch(NetDims::from_genome(g), length); },
      py::arg("genome"), py::arg("length") = static_cast<int>(Genome::kTextLength));

  m.def(
      "sim_run",
      [](std::size_t capacity, std::uint64_t budget, std::uint64_t seed, const Genome& ancestor, double sigma_lr,
         int int_delta, std::uint64_t max_epochs, const std::string& eviction, const std::filesystem::path& arena) {
        PopulationConfig cfg;
        cfg.capacity = capacity;
        cfg.budget = budget;
        cfg.seed = seed;
        cfg.ancestor = ancestor;
        cfg.mutation = MutationScales{sigma_lr, int_delta};
        cfg.training.max_epochs = max_epochs;
        cfg.eviction = eviction_policy_from_string(eviction);
        cfg.arena = arena;
        RunResult run;
        {
          py::gil_scoped_release release;
          run = sim_run(cfg);
        }
        py::dict out = report_dict(run.validation);
        out["events"] = event_lines(run.events);
        return out;
      },
      py::arg("capacity") = 8, py::arg("budget") = 120, py::arg("seed") = 1, py::arg("ancestor") = Genome::ancestor(),
      py::arg("sigma_lr") = 0.002, py::arg("int_delta") = 5, py::arg("max_epochs") = 200000,
      py::arg("eviction") = "kill-oldest", py::arg("arena") = std::filesystem::path{});

  m.def(
      "validate_log",
      [](const std::filesystem::path& path, std::size_t capacity) {
        return report_dict(replay_validate(EventLog::read_file(path), capacity));
      },
      py::arg("path"), py::arg("capacity"));

  m.def(
      "summarize_log",
      [](const std::filesystem::path& path, std::size_t window) {
        const SummaryStats s = summarize(EventLog::read_file(path), window);
        py::dict out;
        std::vector<double> costs;
        for (const auto& r : s.matured) costs.push_back(r.maturity_cost);
        out["maturity_cost"] = costs;
        out["moving_avg"] = s.moving_avg;
        out["first_quartile_mean"] = s.first_quartile_mean;
        out["last_quartile_mean"] = s.last_quartile_mean;
        out["quartile_ratio"] = s.quartile_ratio;
        return out;
      },
      py::arg("path"), py::arg("window") = 16);
}

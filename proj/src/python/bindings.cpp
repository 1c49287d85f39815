// Python bindings for the main operations: graph and plan parsing, plan
// validation, token counting, suite runs, metrics, and trace replay.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fpwc/harness.hpp"

namespace py = pybind11;
using namespace fpwc;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer:
    case nlohmann::json::value_t::number_unsigned:
      return py::int_(j.get<int64_t>());
    case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(json_to_py(item));
      return out;
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (auto it = j.begin(); it != j.end(); ++it)
        out[py::str(it.key())] = json_to_py(it.value());
      return out;
    }
    default: return py::none();
  }
}

py::dict graph_to_py(const wm::WorldModelGraph& g) {
  py::list vertices, edges, warnings;
  for (const auto& v : g.vertices) {
    py::dict d;
    d["name"] = v.name;
    d["description"] = v.description;
    d["can_self_act"] = v.can_self_act;
    d["imagined"] = v.imagined;
    vertices.append(d);
  }
  for (const auto& e : g.edges) {
    py::dict d;
    d["source"] = e.source;
    d["action"] = e.action;
    d["target"] = e.target;
    d["imagined"] = e.imagined;
    d["comment"] = e.comment;
    edges.append(d);
  }
  for (const auto& w : g.warnings)
    warnings.append(py::make_tuple(w.line, w.message));
  py::dict out;
  out["vertices"] = vertices;
  out["edges"] = edges;
  out["warnings"] = warnings;
  out["text"] = wm::serialize_graph(g);
  return out;
}

py::dict parse_graph_py(const std::string& text) {
  return graph_to_py(wm::parse_graph(text));
}

py::dict parse_plan_py(const std::string& text) {
  plan::ParseResult r = plan::parse_plan(text);
  py::dict out;
  out["ok"] = r.ok();
  py::list errors;
  for (const auto& e : r.errors)
    errors.append(py::make_tuple(e.line, e.col, e.message));
  out["errors"] = errors;
  if (r.ok()) {
    out["name"] = r.program->name;
    out["statement_count"] = plan::count_statements(*r.program);
  }
  return out;
}

py::list validate_plan_py(const std::string& plan_text, const std::string& graph_text) {
  plan::ParseResult r = plan::parse_plan(plan_text);
  if (!r.ok()) throw ParseError("plan has syntax errors");
  wm::WorldModelGraph g = wm::parse_graph(graph_text);
  py::list out;
  for (const auto& d : plan::validate_plan(*r.program, g)) {
    py::dict item;
    item["severity"] = d.severity == plan::Diagnostic::Severity::MissingEdge
                           ? "missing_edge"
                           : d.severity == plan::Diagnostic::Severity::Dynamic
                                 ? "dynamic"
                                 : "imagined";
    item["line"] = d.line;
    item["message"] = d.message;
    out.append(item);
  }
  return out;
}

py::dict run_suite_py(const std::string& suite_path, const std::string& oracle_dir,
                      const std::string& out_dir, int max_steps, int parallel) {
  sim::Suite suite = sim::load_suite_file(suite_path);
  harness::RunConfig cfg;
  cfg.backend_kind = "oracle";
  cfg.oracle_dir = oracle_dir;
  cfg.out_dir = out_dir;
  cfg.agent.max_steps = max_steps;
  cfg.parallel = parallel;
  prompts::TemplateSet templates = prompts::TemplateSet::load();
  harness::RunResult result = harness::run_suite(suite, cfg, templates);
  py::dict out;
  out["metrics"] = json_to_py(result.report.to_json());
  out["any_episode_error"] = result.any_episode_error;
  py::list statuses;
  for (const auto& tr : result.traces)
    statuses.append(py::make_tuple(tr.task_id, tr.status));
  out["episodes"] = statuses;
  return out;
}

py::dict replay_trace_py(const std::string& trace_path, const std::string& suite_path) {
  sim::Suite suite = sim::load_suite_file(suite_path);
  trace::EpisodeTrace tr = harness::load_trace_file(trace_path);
  harness::ReplayReport rep = harness::replay(tr, suite);
  py::dict out;
  out["ok"] = rep.ok;
  out["divergent_step"] = rep.divergent_step;
  out["message"] = rep.message;
  out["task_id"] = tr.task_id;
  return out;
}

py::dict compute_metrics_py(const std::string& traces_dir,
                            const std::string& suite_path) {
  sim::Suite suite = sim::load_suite_file(suite_path);
  auto traces = harness::load_traces_dir(traces_dir);
  return py::dict(py::arg("metrics") =
                      json_to_py(harness::compute_metrics(traces, suite).to_json()),
                  py::arg("trace_count") = py::int_(traces.size()));
}

}  // namespace

PYBIND11_MODULE(_fpwc, m) {
  m.doc() = "Device-control agent core: graph/plan parsing, suite runs, replay";

  m.def("normalize_name", &wm::normalize_name,
        "Canonical form of a vertex name: lowercased, whitespace collapsed, "
        "surrounding quotes stripped");
  m.def("count_tokens", &backend::count_tokens,
        "Token estimate used for accounting: ceil(chars / 4)");
  m.def("parse_graph", &parse_graph_py,
        "Parse graph text into vertices, edges and parse warnings");
  m.def("parse_plan", &parse_plan_py,
        "Parse a plan function; returns name, statement count and syntax errors");
  m.def("validate_plan", &validate_plan_py,
        "Static checks of a plan against a graph", py::arg("plan_text"),
        py::arg("graph_text"));
  m.def("run_suite", &run_suite_py, "Run a task suite with the ground-truth backend",
        py::arg("suite_path"), py::arg("oracle_dir"), py::arg("out_dir") = "",
        py::arg("max_steps") = 30, py::arg("parallel") = 1);
  m.def("replay_trace", &replay_trace_py,
        "Re-execute a recorded trace on a fresh simulator", py::arg("trace_path"),
        py::arg("suite_path"));
  m.def("compute_metrics", &compute_metrics_py,
        "Recompute benchmark metrics from a directory of traces",
        py::arg("traces_dir"), py::arg("suite_path"));

  py::register_exception<fpwc::Error>(m, "FpwcError");
}

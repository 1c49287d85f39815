#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fpwc/harness.hpp"

namespace fs = std::filesystem;
using namespace fpwc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitTaskFailures = 1;
constexpr int kExitInfrastructure = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool parse_grid(const std::string& spec, int& rows, int& cols) {
  size_t x = spec.find('x');
  if (x == std::string::npos) x = spec.find('X');
  if (x == std::string::npos) return false;
  try {
    rows = std::stoi(spec.substr(0, x));
    cols = std::stoi(spec.substr(x + 1));
  } catch (const std::exception&) {
    return false;
  }
  return rows >= 1 && cols >= 1;
}

int cmd_run(const std::string& suite_path, harness::RunConfig config,
            const std::string& grid_spec, const std::string& templates_dir) {
  if (!grid_spec.empty() &&
      !parse_grid(grid_spec, config.agent.grid_rows, config.agent.grid_cols)) {
    std::cerr << "error: --grid expects RxC, e.g. 9x6\n";
    return kExitInfrastructure;
  }
  sim::Suite suite = sim::load_suite_file(suite_path);
  if (config.oracle_dir.empty())
    config.oracle_dir = (fs::path(suite_path).parent_path() / "oracle").string();

  prompts::TemplateSet templates = prompts::TemplateSet::load(templates_dir);
  harness::RunResult result = harness::run_suite(suite, config, templates);

  std::cout << result.report.to_json().dump(2) << "\n";
  int failures = result.report.m_tasks - result.report.n_success;
  if (result.any_episode_error) return kExitInfrastructure;
  return failures > 0 ? kExitTaskFailures : kExitOk;
}

int cmd_metrics(const std::string& traces_dir, const std::string& suite_path) {
  sim::Suite suite = sim::load_suite_file(suite_path);
  auto traces = harness::load_traces_dir(traces_dir);
  harness::MetricsReport report = harness::compute_metrics(traces, suite);
  std::cout << report.to_json().dump(2) << "\n";
  return kExitOk;
}

int cmd_validate_plan(const std::string& plan_path, const std::string& graph_path) {
  wm::WorldModelGraph graph = wm::parse_graph(read_file(graph_path));
  plan::ParseResult parsed = plan::parse_plan(read_file(plan_path));
  if (!parsed.ok()) {
    for (const auto& e : parsed.errors)
      std::cout << "syntax error at line " << e.line << ", col " << e.col << ": "
                << e.message << "\n";
    return kExitTaskFailures;
  }
  auto diagnostics = plan::validate_plan(*parsed.program, graph);
  bool missing = false;
  for (const auto& d : diagnostics) {
    const char* label = d.severity == plan::Diagnostic::Severity::MissingEdge
                            ? "missing-edge"
                            : d.severity == plan::Diagnostic::Severity::Dynamic
                                  ? "dynamic"
                                  : "imagined";
    missing |= d.severity == plan::Diagnostic::Severity::MissingEdge;
    std::cout << label << " at line " << d.line << ": " << d.message << "\n";
  }
  std::cout << (missing ? "plan references edges absent from the graph\n"
                        : "plan ok\n");
  return missing ? kExitTaskFailures : kExitOk;
}

int cmd_inspect_graph(const std::string& store_dir, const std::string& app) {
  wm::GraphStore store(store_dir);
  auto graph = store.load(app);
  if (!graph) {
    std::cerr << "error: no stored graph for app '" << app << "'\n";
    return kExitInfrastructure;
  }
  std::cout << wm::serialize_graph(*graph);
  std::cout << "# " << graph->vertices.size() << " vertices, " << graph->edges.size()
            << " edges";
  size_t dangling = graph->dangling_edges().size();
  if (dangling > 0) std::cout << ", " << dangling << " dangling edges";
  std::cout << "\n";
  return kExitOk;
}

int cmd_replay(const std::string& trace_path, const std::string& suite_path) {
  sim::Suite suite = sim::load_suite_file(suite_path);
  trace::EpisodeTrace tr = harness::load_trace_file(trace_path);
  harness::ReplayReport report = harness::replay(tr, suite);
  if (report.ok) {
    std::cout << "replay ok: " << tr.task_id << "\n";
    return kExitOk;
  }
  std::cout << "replay divergence: " << report.message << "\n";
  return kExitTaskFailures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Device-control agent benchmark runner"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run a task suite against a backend");
  std::string suite_path, grid_spec, templates_dir;
  harness::RunConfig config;
  run->add_option("--suite", suite_path, "Suite JSON file")->required();
  run->add_option("--backend", config.backend_kind, "oracle | scripted | http")
      ->default_val("oracle");
  run->add_option("--tape", config.tape_dir, "Tape directory for the scripted backend");
  run->add_option("--record-tape", config.record_tape_dir,
                  "Record all model exchanges as tapes into this directory");
  run->add_option("--oracle-dir", config.oracle_dir,
                  "Oracle fixture directory (default: <suite dir>/oracle)");
  run->add_option("--model", config.model, "Model name for the http backend");
  run->add_option("--max-steps", config.agent.max_steps, "Device action budget")
      ->default_val(30);
  run->add_option("--grid", grid_spec, "Grid fallback geometry RxC (default 9x6)");
  run->add_option("--out", config.out_dir, "Trace output directory");
  run->add_option("--parallel", config.parallel, "Concurrent episodes")->default_val(1);
  run->add_option("--store", config.agent.store_dir,
                  "Graph store directory for persistence");
  run->add_option("--templates", templates_dir, "Prompt template directory override");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Recompute metrics from traces");
  std::string traces_dir, m_suite;
  metrics->add_option("--traces", traces_dir, "Trace directory")->required();
  metrics->add_option("--suite", m_suite, "Suite JSON file")->required();

  // validate-plan
  auto* validate = app.add_subcommand("validate-plan", "Check a plan against a graph");
  std::string plan_path, graph_path;
  validate->add_option("--plan", plan_path, "Plan source file")->required();
  validate->add_option("--graph", graph_path, "Graph text file")->required();

  // inspect-graph
  auto* inspect = app.add_subcommand("inspect-graph", "Print a stored graph");
  std::string store_dir, app_name;
  inspect->add_option("--store", store_dir, "Graph store directory")->required();
  inspect->add_option("--app", app_name, "App name")->required();

  // replay
  auto* replay = app.add_subcommand("replay", "Re-execute a recorded trace");
  std::string trace_path, r_suite;
  replay->add_option("--trace", trace_path, "Trace file")->required();
  replay->add_option("--suite", r_suite, "Suite JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(suite_path, std::move(config), grid_spec,
                                      templates_dir);
    if (metrics->parsed()) return cmd_metrics(traces_dir, m_suite);
    if (validate->parsed()) return cmd_validate_plan(plan_path, graph_path);
    if (inspect->parsed()) return cmd_inspect_graph(store_dir, app_name);
    if (replay->parsed()) return cmd_replay(trace_path, r_suite);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfrastructure;
  }
  return kExitInfrastructure;
}

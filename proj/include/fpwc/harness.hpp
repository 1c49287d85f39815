#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fpwc/agent.hpp"
#include "fpwc/device_sim.hpp"
#include "fpwc/trace.hpp"

namespace fpwc::harness {

using json = nlohmann::json;

struct MetricsReport {
  std::optional<double> sr;         // successes / tasks
  std::optional<double> se;         // mean actual/optimal steps over successes
  std::optional<double> latency_s;  // mean backend wall time per executed action
  std::optional<double> tokens;     // mean per-task total (input + output)
  std::optional<double> fn;         // early terminations / failures
  std::optional<double> fp;         // post-success continuation / successes
  std::optional<double> cr;         // correct steps / required steps
  std::optional<double> avg_steps;

  // Denominators, recorded so the report is auditable.
  int m_tasks = 0;
  int n_success = 0;
  int n_failure = 0;
  int n_early = 0;
  int n_late = 0;          // successes that kept acting after first success
  int64_t s_correct = 0;
  int64_t s_total = 0;

  json to_json() const;
};

// Pure function of traces + suite; every trace's task_id must be in the suite.
MetricsReport compute_metrics(const std::vector<trace::EpisodeTrace>& traces,
                              const sim::Suite& suite);

struct RunConfig {
  std::string backend_kind = "oracle";  // oracle | scripted | http
  std::string tape_dir;                 // scripted: tapes read per task
  std::string record_tape_dir;          // non-empty: record tapes while running
  std::string oracle_dir;               // oracle fixture files, <task_id>.json
  std::string model;
  std::string out_dir;  // trace output, <task_id>.trace.jsonl
  int parallel = 1;
  agent::AgentConfig agent;
};

struct RunResult {
  std::vector<trace::EpisodeTrace> traces;
  MetricsReport report;
  bool any_episode_error = false;
};

RunResult run_suite(const sim::Suite& suite, const RunConfig& config,
                    const prompts::TemplateSet& templates);

struct ReplayReport {
  bool ok = false;
  int divergent_step = -1;  // index into trace.steps of the first divergence
  std::string message;
};

// Re-executes the recorded action sequence on a fresh simulator, checking
// observation digests and the recorded final success flag.
ReplayReport replay(const trace::EpisodeTrace& trace, const sim::Suite& suite);

std::vector<trace::EpisodeTrace> load_traces_dir(const std::string& dir);
trace::EpisodeTrace load_trace_file(const std::string& path);

}  // namespace fpwc::harness

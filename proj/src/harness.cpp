#include "fpwc/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace fpwc::trace {

using ojson = nlohmann::ordered_json;

std::string EpisodeTrace::to_jsonl() const {
  std::ostringstream os;
  ojson header = {{"type", "header"},
                  {"schema_version", schema_version},
                  {"task_id", task_id},
                  {"backend", backend_name},
                  {"app", app_name},
                  {"goal", goal},
                  {"grid_rows", grid_rows},
                  {"grid_cols", grid_cols}};
  os << header.dump() << "\n";
  for (const auto& s : steps) {
    ojson grounding = ojson::array();
    for (const auto& g : s.grounding)
      grounding.push_back(
          {{"mode", g.mode}, {"candidate", g.candidate}, {"accepted", g.accepted}});
    ojson calls = ojson::array();
    for (const auto& c : s.model_calls)
      calls.push_back({{"kind", c.kind},
                       {"input_tokens", c.input_tokens},
                       {"output_tokens", c.output_tokens},
                       {"wall_ms", c.wall_ms}});
    ojson rec = {{"type", "step"},
                 {"t", s.step_index},
                 {"effect", s.effect},
                 {"grounding", grounding},
                 {"action", s.action},
                 {"effect_flag", s.effect_flag},
                 {"obs_digest", s.obs_digest},
                 {"model_calls", calls},
                 {"depth", s.depth},
                 {"success_now", s.success_now},
                 {"note", s.note}};
    os << rec.dump() << "\n";
  }
  ojson footer = {{"type", "footer"},
                  {"status", status},
                  {"finish_reason", finish_reason},
                  {"early_finish", early_finish},
                  {"executed_actions", executed_actions},
                  {"total_input_tokens", total_input_tokens},
                  {"total_output_tokens", total_output_tokens},
                  {"total_wall_ms", total_wall_ms},
                  {"first_success_step", first_success_step},
                  {"final_graph", final_graph_text}};
  os << footer.dump() << "\n";
  return os.str();
}

EpisodeTrace EpisodeTrace::from_jsonl(const std::string& text) {
  EpisodeTrace out;
  bool saw_header = false, saw_footer = false;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ojson rec;
    try {
      rec = ojson::parse(line);
    } catch (const ojson::exception& e) {
      throw StorageError(std::string("malformed trace line: ") + e.what());
    }
    std::string type = rec.value("type", "");
    if (type == "header") {
      out.schema_version = rec.value("schema_version", 0);
      if (out.schema_version != kSchemaVersion)
        throw StorageError("unsupported trace schema version " +
                           std::to_string(out.schema_version));
      out.task_id = rec.value("task_id", "");
      out.backend_name = rec.value("backend", "");
      out.app_name = rec.value("app", "");
      out.goal = rec.value("goal", "");
      out.grid_rows = rec.value("grid_rows", 9);
      out.grid_cols = rec.value("grid_cols", 6);
      saw_header = true;
    } else if (type == "step") {
      StepRecord s;
      s.step_index = rec.value("t", 0);
      s.effect = rec.value("effect", "");
      for (const auto& g : rec.value("grounding", ojson::array()))
        s.grounding.push_back({g.value("mode", ""), g.value("candidate", 0),
                               g.value("accepted", false)});
      s.action = rec.value("action", "");
      s.effect_flag = rec.value("effect_flag", "");
      s.obs_digest = rec.value("obs_digest", "");
      for (const auto& c : rec.value("model_calls", ojson::array()))
        s.model_calls.push_back({c.value("kind", ""), c.value("input_tokens", int64_t(0)),
                                 c.value("output_tokens", int64_t(0)),
                                 c.value("wall_ms", int64_t(0))});
      s.depth = rec.value("depth", 0);
      s.success_now = rec.value("success_now", false);
      s.note = rec.value("note", "");
      out.steps.push_back(std::move(s));
    } else if (type == "footer") {
      out.status = rec.value("status", "");
      out.finish_reason = rec.value("finish_reason", "");
      out.early_finish = rec.value("early_finish", false);
      out.executed_actions = rec.value("executed_actions", 0);
      out.total_input_tokens = rec.value("total_input_tokens", int64_t(0));
      out.total_output_tokens = rec.value("total_output_tokens", int64_t(0));
      out.total_wall_ms = rec.value("total_wall_ms", int64_t(0));
      out.first_success_step = rec.value("first_success_step", -1);
      out.final_graph_text = rec.value("final_graph", "");
      saw_footer = true;
    } else {
      throw StorageError("trace record with unknown type '" + type + "'");
    }
  }
  if (!saw_header || !saw_footer)
    throw StorageError("trace file missing header or footer record");
  return out;
}

}  // namespace fpwc::trace

namespace fpwc::harness {

json MetricsReport::to_json() const {
  json j;
  auto put = [&](const char* name, const std::optional<double>& v) {
    if (v) j[name] = *v;
  };
  put("SR", sr);
  put("SE", se);
  put("latency_s", latency_s);
  put("tokens", tokens);
  put("FN", fn);
  put("FP", fp);
  put("CR", cr);
  put("avg_steps", avg_steps);
  j["counts"] = {{"tasks", m_tasks},         {"successes", n_success},
                 {"failures", n_failure},    {"early_terminations", n_early},
                 {"late_continuations", n_late}, {"correct_steps", s_correct},
                 {"required_steps", s_total}};
  j["notes"] = {
      "latency counts backend wall time only; the simulator itself is free",
      "step correctness is a longest-common-prefix match against the declared "
      "optimal action sequence"};
  return j;
}

MetricsReport compute_metrics(const std::vector<trace::EpisodeTrace>& traces,
                              const sim::Suite& suite) {
  MetricsReport r;
  r.m_tasks = static_cast<int>(traces.size());

  double se_sum = 0;
  int64_t wall_ms_sum = 0, actions_sum = 0, tokens_sum = 0;
  double steps_sum = 0;

  for (const auto& t : traces) {
    const sim::TaskSpec* task = suite.find_task(t.task_id);
    if (!task) throw Error("trace references unknown task '" + t.task_id + "'");

    if (t.status == "success") {
      ++r.n_success;
      se_sum += static_cast<double>(t.executed_actions) /
                std::max(1, task->optimal_steps);
      if (t.first_success_step >= 0 && t.executed_actions > t.first_success_step)
        ++r.n_late;
    } else if (t.status == "failure") {
      ++r.n_failure;
      if (t.early_finish) ++r.n_early;
    }

    wall_ms_sum += t.total_wall_ms;
    actions_sum += t.executed_actions;
    tokens_sum += t.total_input_tokens + t.total_output_tokens;
    steps_sum += t.executed_actions;

    if (!task->optimal_actions.empty()) {
      std::vector<std::string> executed;
      for (const auto& s : t.steps)
        if (!s.action.empty()) executed.push_back(s.action);
      size_t prefix = 0;
      while (prefix < executed.size() && prefix < task->optimal_actions.size() &&
             executed[prefix] == task->optimal_actions[prefix])
        ++prefix;
      r.s_correct += static_cast<int64_t>(prefix);
      r.s_total += static_cast<int64_t>(task->optimal_actions.size());
    }
  }

  if (r.m_tasks > 0) {
    r.sr = static_cast<double>(r.n_success) / r.m_tasks;
    r.tokens = static_cast<double>(tokens_sum) / r.m_tasks;
    r.avg_steps = steps_sum / r.m_tasks;
  }
  if (r.n_success > 0) {
    r.se = se_sum / r.n_success;
    r.fp = static_cast<double>(r.n_late) / r.n_success;
  }
  if (r.n_failure > 0) r.fn = static_cast<double>(r.n_early) / r.n_failure;
  if (actions_sum > 0)
    r.latency_s = static_cast<double>(wall_ms_sum) / 1000.0 / actions_sum;
  if (r.s_total > 0) r.cr = static_cast<double>(r.s_correct) / r.s_total;
  return r;
}

namespace {

std::unique_ptr<backend::Backend> make_backend(const RunConfig& config,
                                               const sim::TaskSpec& task,
                                               const sim::Device& device) {
  if (config.backend_kind == "oracle") {
    std::string path = config.oracle_dir + "/" + task.task_id + ".json";
    return std::make_unique<backend::OracleBackend>(
        backend::OracleBackend::from_file(path, device));
  }
  if (config.backend_kind == "scripted") {
    std::string path = config.tape_dir + "/" + task.task_id + ".tape.json";
    return std::make_unique<backend::ScriptedBackend>(
        backend::ScriptedBackend::from_file(path));
  }
  if (config.backend_kind == "http") {
    return std::make_unique<backend::HttpBackend>(
        backend::HttpBackend::config_from_env(config.model));
  }
  throw Error("unknown backend kind '" + config.backend_kind + "'");
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot write " + path);
  out << content;
}

}  // namespace

RunResult run_suite(const sim::Suite& suite, const RunConfig& config,
                    const prompts::TemplateSet& templates) {
  RunResult result;
  result.traces.resize(suite.tasks.size());
  std::vector<char> errors(suite.tasks.size(), 0);

  auto run_one = [&](size_t index) {
    const sim::TaskSpec& task = suite.tasks[index];
    sim::Device device;
    for (const auto& app : suite.apps) device.register_app(app);

    std::unique_ptr<backend::Backend> be = make_backend(config, task, device);
    backend::Backend* active = be.get();
    std::unique_ptr<backend::RecordingBackend> recorder;
    if (!config.record_tape_dir.empty()) {
      recorder = std::make_unique<backend::RecordingBackend>(*be);
      active = recorder.get();
    }

    agent::EpisodeResult ep = agent::run_episode(device, task, *active,
                                                 config.agent, templates);
    if (ep.outcome.status == agent::EpisodeStatus::Error) errors[index] = 1;
    result.traces[index] = std::move(ep.trace);

    if (recorder) {
      std::filesystem::create_directories(config.record_tape_dir);
      write_file(config.record_tape_dir + "/" + task.task_id + ".tape.json",
                 recorder->tape_json().dump(2) + "\n");
    }
    if (!config.out_dir.empty()) {
      std::filesystem::create_directories(config.out_dir);
      write_file(config.out_dir + "/" + task.task_id + ".trace.jsonl",
                 result.traces[index].to_jsonl());
    }
  };

  int parallel = std::max(1, config.parallel);
  if (parallel == 1) {
    for (size_t i = 0; i < suite.tasks.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < parallel; ++w) {
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < suite.tasks.size();
             i = next.fetch_add(1))
          run_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (char e : errors) result.any_episode_error |= (e != 0);
  result.report = compute_metrics(result.traces, suite);
  return result;
}

ReplayReport replay(const trace::EpisodeTrace& tr, const sim::Suite& suite) {
  ReplayReport report;
  const sim::TaskSpec* task = suite.find_task(tr.task_id);
  if (!task) {
    report.message = "task '" + tr.task_id + "' not in suite";
    return report;
  }
  sim::Device device;
  for (const auto& app : suite.apps) device.register_app(app);

  auto [state, obs] = device.reset(*task);
  std::vector<std::string> cmd_history;

  for (size_t i = 0; i < tr.steps.size(); ++i) {
    const trace::StepRecord& s = tr.steps[i];
    if (s.action.empty()) {
      if (s.effect == "wait()") {
        auto [next, nobs] = device.tick(state);
        state = next;
        obs = nobs;
        if (obs.digest() != s.obs_digest) {
          report.divergent_step = static_cast<int>(i);
          report.message = "observation digest mismatch after wait at step " +
                           std::to_string(i);
          return report;
        }
      }
      continue;
    }
    auto cmd = sim::command_from_string(s.action);
    if (!cmd) {
      report.divergent_step = static_cast<int>(i);
      report.message = "unparseable recorded action '" + s.action + "'";
      return report;
    }
    // Actions grounded in grid mode were numbered against grid cells.
    bool grid = false;
    for (const auto& g : s.grounding) grid |= (g.accepted && g.mode == "grid");
    if (grid) state = device.observe_grid(state, tr.grid_rows, tr.grid_cols).second;

    sim::ExecOutcome outcome = device.execute(state, *cmd);
    state = outcome.state;
    obs = outcome.observation;
    cmd_history.push_back(s.action);
    if (obs.digest() != s.obs_digest) {
      report.divergent_step = static_cast<int>(i);
      report.message = "observation digest mismatch at step " + std::to_string(i);
      return report;
    }
  }

  if (!task->success.is_null() && tr.status != "error") {
    bool pred = device.check_success(*task, state, cmd_history);
    bool recorded = tr.status == "success";
    if (pred != recorded) {
      report.message = "final success flag mismatch: replay says " +
                       std::string(pred ? "true" : "false");
      return report;
    }
  }
  report.ok = true;
  report.message = "ok";
  return report;
}

trace::EpisodeTrace load_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open trace file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return trace::EpisodeTrace::from_jsonl(os.str());
}

std::vector<trace::EpisodeTrace> load_traces_dir(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".jsonl") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<trace::EpisodeTrace> traces;
  for (const auto& p : paths) traces.push_back(load_trace_file(p));
  return traces;
}

}  // namespace fpwc::harness

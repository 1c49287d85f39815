#include "fpwc/agent.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace fpwc::agent {

using backend::ModelRequest;
using backend::ModelResponse;
using backend::RequestKind;
using util::istarts_with;
using util::to_lower;
using util::trim;

std::string status_name(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::Success: return "success";
    case EpisodeStatus::Failure: return "failure";
    case EpisodeStatus::BudgetExhausted: return "budget_exhausted";
    case EpisodeStatus::Error: return "error";
  }
  return "error";
}

namespace {

struct BudgetExceeded {};

struct FatalEpisodeError {
  std::string reason;
};

std::string vertices_section(const wm::WorldModelGraph& g) {
  std::ostringstream os;
  for (size_t i = 0; i < g.vertices.size(); ++i) {
    if (i) os << "\n";
    os << wm::serialize_vertex(g.vertices[i]);
  }
  return os.str();
}

std::string edges_section(const wm::WorldModelGraph& g) {
  std::ostringstream os;
  for (size_t i = 0; i < g.edges.size(); ++i) {
    if (i) os << "\n";
    os << wm::serialize_edge(g.edges[i]);
  }
  return os.str();
}

std::optional<int> parse_number_token(const std::string& text) {
  std::string t = trim(text);
  size_t i = 0;
  while (i < t.size() && !std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
  size_t j = i;
  while (j < t.size() && std::isdigit(static_cast<unsigned char>(t[j]))) ++j;
  if (i == j) return std::nullopt;
  try {
    return std::stoi(t.substr(i, j - i));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<sim::Direction> swipe_direction(const std::string& phrase) {
  std::string p = to_lower(phrase);
  if (p.find("down") != std::string::npos) return sim::Direction::Down;
  if (p.find("up") != std::string::npos) return sim::Direction::Up;
  if (p.find("left") != std::string::npos) return sim::Direction::Left;
  if (p.find("right") != std::string::npos) return sim::Direction::Right;
  return std::nullopt;
}

// The per-level planning state of one (sub-)agent.
struct AgentLevel {
  std::string goal;
  std::string app_name;
  int depth = 0;
  wm::WorldModelGraph graph;
  std::string plan_source;
  std::string current_vertex;
  std::string remind;
};

class EpisodeRunner {
public:
  EpisodeRunner(const sim::Device& device, const sim::TaskSpec& task,
                backend::Backend& backend, const AgentConfig& cfg,
                const prompts::TemplateSet& templates)
      : device_(device), task_(task), backend_(backend), cfg_(cfg),
        templates_(templates) {}

  EpisodeResult run();

private:
  struct LevelResult {
    bool completed = false;
    std::string message;
  };

  LevelResult run_agent(const std::string& goal, const std::string& app, int depth);
  void init_level(AgentLevel& level);
  plan::PlanProgramPtr request_plan(AgentLevel& level, bool with_observation);

  std::optional<sim::ActionCommand> ground(AgentLevel& level, const plan::DoEdge& e);
  void execute_command(AgentLevel& level, const plan::DoEdge& e,
                       const sim::ActionCommand& cmd);
  std::optional<plan::ExecState> refine(AgentLevel& level, const plan::DoEdge& e,
                                        const std::string& cmd_str,
                                        const std::string& effect_flag);
  bool eval_is_true(AgentLevel& level, const plan::QueryTrue& q);
  void handle_wait();

  ModelResponse call(RequestKind kind, const std::string& prompt,
                     std::map<std::string, std::string> aux, bool with_obs,
                     bool with_prev = false);

  void begin_record(const std::string& effect, int depth);
  void end_record();
  void check_success_now();

  const sim::Device& device_;
  const sim::TaskSpec& task_;
  backend::Backend& backend_;
  AgentConfig cfg_;
  const prompts::TemplateSet& templates_;

  sim::DeviceState state_;
  sim::Observation obs_;
  std::optional<sim::Observation> prev_obs_;

  trace::EpisodeTrace trace_;
  trace::StepRecord rec_;
  bool rec_open_ = false;

  int t_ = 0;              // executed device actions, shared across depths
  int64_t effects_ = 0;    // total effects handled, loop guard
  int ineffective_streak_ = 0;
  int first_success_ = -1;
  std::vector<std::string> cmd_history_;
  std::vector<std::string> act_history_;
  std::vector<plan::ExecState> discarded_;
  std::string top_level_graph_text_;
  wm::WorldModelGraph final_graph_;
};

void EpisodeRunner::begin_record(const std::string& effect, int depth) {
  rec_ = trace::StepRecord{};
  rec_.effect = effect;
  rec_.depth = depth;
  rec_.step_index = t_;
  rec_open_ = true;
}

void EpisodeRunner::end_record() {
  if (!rec_open_) return;
  rec_.step_index = t_;
  if (rec_.obs_digest.empty()) rec_.obs_digest = obs_.digest();
  rec_.success_now = first_success_ >= 0;
  trace_.steps.push_back(rec_);
  rec_open_ = false;
}

ModelResponse EpisodeRunner::call(RequestKind kind, const std::string& prompt,
                                  std::map<std::string, std::string> aux,
                                  bool with_obs, bool with_prev) {
  ModelRequest req;
  req.kind = kind;
  req.prompt = prompt;
  req.episode_id = task_.task_id;
  req.step_index = t_;
  req.aux = std::move(aux);
  if (with_obs) req.observation = obs_;
  if (with_prev && prev_obs_) req.prev_observation = prev_obs_;
  ModelResponse resp = backend_.complete(req);
  if (rec_open_) {
    rec_.model_calls.push_back({backend::kind_name(kind), resp.input_tokens,
                                resp.output_tokens, resp.wall_ms});
  }
  trace_.total_input_tokens += resp.input_tokens;
  trace_.total_output_tokens += resp.output_tokens;
  trace_.total_wall_ms += resp.wall_ms;
  return resp;
}

void EpisodeRunner::check_success_now() {
  if (first_success_ >= 0) return;
  if (task_.success.is_null()) return;
  if (device_.check_success(task_, state_, cmd_history_)) first_success_ = t_;
}

void EpisodeRunner::init_level(AgentLevel& level) {
  prompts::PromptContext ctx;
  ctx.goal = level.goal;
  ctx.app_name = level.app_name;
  std::string prompt = prompts::render(prompts::Template::InitGraph, ctx, templates_);

  begin_record("init_graph", level.depth);
  ModelResponse resp =
      call(RequestKind::InitGraph, prompt,
           {{"goal", level.goal}, {"app", level.app_name}}, /*with_obs=*/false);
  end_record();
  try {
    level.graph = wm::parse_graph(resp.text);
  } catch (const ParseError& e) {
    throw FatalEpisodeError{std::string("initial graph unparseable: ") + e.what()};
  }
}

plan::PlanProgramPtr EpisodeRunner::request_plan(AgentLevel& level,
                                                 bool with_observation) {
  prompts::PromptContext ctx;
  ctx.goal = level.goal;
  ctx.app_name = level.app_name;
  ctx.graph_vertices = vertices_section(level.graph);
  ctx.graph_edges = edges_section(level.graph);
  std::string prompt = prompts::render(prompts::Template::InitPlan, ctx, templates_);

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg_.max_replan_retries; ++attempt) {
    begin_record("init_plan", level.depth);
    ModelResponse resp =
        call(RequestKind::InitPlan, prompt,
             {{"goal", level.goal}, {"app", level.app_name}}, with_observation);
    end_record();
    try {
      prompts::PlanResponse pr = prompts::parse_plan_response(resp.text);
      plan::ParseResult parsed = plan::parse_plan(pr.plan_text);
      if (!parsed.ok()) {
        std::ostringstream os;
        os << "plan syntax errors:";
        for (const auto& e : parsed.errors) os << " [line " << e.line << "] " << e.message;
        last_error = os.str();
        continue;
      }
      level.current_vertex = pr.current_vertex;
      level.plan_source = parsed.program->source_text;
      return parsed.program;
    } catch (const ParseError& e) {
      last_error = e.what();
    }
  }
  throw FatalEpisodeError{"plan unparseable after retries: " + last_error};
}

std::optional<sim::ActionCommand> EpisodeRunner::ground(AgentLevel& level,
                                                        const plan::DoEdge& e) {
  std::string phrase = trim(e.action);
  std::string lower = to_lower(phrase);

  // System-level actions skip selection and verification entirely.
  if (istarts_with(lower, "back") || istarts_with(lower, "keycode"))
    return sim::ActionCommand{sim::BackCmd{}};
  if (istarts_with(lower, "swipe")) {
    auto dir = swipe_direction(lower);
    if (dir) return sim::ActionCommand{sim::Swipe{0, *dir}};
    return std::nullopt;
  }
  if (istarts_with(lower, "type")) {
    size_t space = phrase.find(' ');
    std::string payload = space == std::string::npos ? "" : trim(phrase.substr(space + 1));
    return sim::ActionCommand{sim::TextInput{payload}};
  }

  bool long_press = istarts_with(lower, "long_press") || istarts_with(lower, "long press");

  std::set<std::pair<std::string, int>> wrong;  // (observation digest, number)
  auto excluded_csv = [&](const std::string& digest) {
    std::ostringstream os;
    bool first = true;
    for (const auto& [d, n] : wrong) {
      if (d != digest) continue;
      if (!first) os << ",";
      os << n;
      first = false;
    }
    return os.str();
  };

  auto attempt_round = [&](const std::string& mode) -> std::optional<sim::ActionCommand> {
    for (int attempt = 0; attempt < cfg_.max_verify_attempts; ++attempt) {
      std::string digest = obs_.digest();
      std::map<std::string, std::string> aux = {{"action", phrase},
                                                {"excluded", excluded_csv(digest)},
                                                {"mode", mode},
                                                {"goal", level.goal}};
      if (!level.remind.empty()) aux["remind"] = level.remind;
      std::string sel_prompt =
          "Select the numbered element of the current screen that matches the action: " +
          phrase +
          (level.remind.empty() ? "" : "\nReminder: " + level.remind) +
          "\nAnswer with the element number only." +
          (aux["excluded"].empty() ? "" : "\nDo not answer any of: " + aux["excluded"]);
      ModelResponse sel = call(RequestKind::SelectAction, sel_prompt, aux, true);
      auto number = parse_number_token(sel.text);
      if (!number) return std::nullopt;  // backend sees no candidate

      bool in_range = false;
      for (const auto& entry : obs_.entries) in_range |= entry.number == *number;
      if (!in_range || wrong.count({digest, *number})) {
        rec_.grounding.push_back({mode, number.value_or(0), false});
        wrong.insert({digest, *number});
        continue;
      }

      std::map<std::string, std::string> vaux = {{"action", phrase},
                                                 {"mode", mode},
                                                 {"goal", level.goal}};
      if (mode == "elements") {
        sim::ElementDetail crop;
        try {
          crop = device_.crop_query(state_, *number);
        } catch (const Error&) {
          rec_.grounding.push_back({mode, *number, false});
          wrong.insert({digest, *number});
          continue;
        }
        vaux["crop_label"] = crop.label;
        vaux["crop_kind"] = crop.kind;
        vaux["crop_state"] = crop.state;
      }
      std::string ver_prompt =
          "Looking only at the zoomed-in crop of candidate element " +
          std::to_string(*number) + ", does it match the action: " + phrase +
          "? Answer True or False.";
      ModelResponse ver = call(RequestKind::VerifyAction, ver_prompt, vaux, true);
      bool accepted = istarts_with(trim(ver.text), "true");
      rec_.grounding.push_back({mode, *number, accepted});
      if (accepted) {
        if (long_press) return sim::ActionCommand{sim::LongPress{*number}};
        return sim::ActionCommand{sim::Tap{*number}};
      }
      wrong.insert({digest, *number});
    }
    return std::nullopt;
  };

  bool start_in_grid = ineffective_streak_ >= cfg_.grid_fallback_after;
  if (!start_in_grid) {
    if (auto cmd = attempt_round("elements")) return cmd;
  }

  // Element grounding failed repeatedly; fall back to numbered grid cells.
  auto [gobs, gstate] = device_.observe_grid(state_, cfg_.grid_rows, cfg_.grid_cols);
  state_ = gstate;
  obs_ = gobs;
  backend_.observe_state(state_);
  if (auto cmd = attempt_round("grid")) return cmd;
  return std::nullopt;
}

void EpisodeRunner::execute_command(AgentLevel& level, const plan::DoEdge& e,
                                    const sim::ActionCommand& cmd) {
  if (t_ >= cfg_.max_steps) throw BudgetExceeded{};
  sim::ExecOutcome outcome = device_.execute(state_, cmd);
  prev_obs_ = obs_;
  state_ = outcome.state;
  obs_ = outcome.observation;
  backend_.observe_state(state_);
  ++t_;

  std::string cmd_str = sim::command_to_string(cmd);
  rec_.action = cmd_str;
  rec_.effect_flag = outcome.flag == sim::EffectFlag::Changed ? "changed" : "no_effect";
  rec_.obs_digest = obs_.digest();
  if (!outcome.note.empty()) rec_.note = outcome.note;
  cmd_history_.push_back(cmd_str);
  act_history_.push_back("E(\"" + e.source + "\", \"" + e.action + "\") -> " + cmd_str);
  trace_.executed_actions = t_;

  if (outcome.flag == sim::EffectFlag::NoEffect)
    ++ineffective_streak_;
  else
    ineffective_streak_ = 0;
  check_success_now();
  (void)level;
}

std::optional<plan::ExecState> EpisodeRunner::refine(AgentLevel& level,
                                                     const plan::DoEdge& e,
                                                     const std::string& cmd_str,
                                                     const std::string& effect_flag) {
  prompts::PromptContext ctx;
  ctx.goal = level.goal;
  ctx.app_name = level.app_name;
  ctx.graph_vertices = vertices_section(level.graph);
  ctx.graph_edges = edges_section(level.graph);
  ctx.plan_text = level.plan_source;
  ctx.previous_vertex = level.current_vertex;
  ctx.action = e.action;
  ctx.detailed_action = cmd_str.empty() ? "none" : cmd_str;
  {
    std::ostringstream os;
    size_t start = act_history_.size() > 10 ? act_history_.size() - 10 : 0;
    for (size_t i = start; i < act_history_.size(); ++i) {
      if (i > start) os << "\n";
      os << act_history_[i];
    }
    ctx.act_history = os.str();
  }
  if (ineffective_streak_ > 0)
    ctx.repeated_elements =
        std::to_string(ineffective_streak_) + " consecutive actions had no effect";
  std::string prompt = prompts::render(prompts::Template::Refine, ctx, templates_);

  std::map<std::string, std::string> aux = {{"effect_flag", effect_flag},
                                            {"current_vertex", level.current_vertex},
                                            {"goal", level.goal}};

  prompts::RefinementOutcome outcome;
  bool parsed = false;
  for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
    ModelResponse resp = call(RequestKind::Refine, prompt, aux, true, true);
    try {
      outcome = prompts::parse_refinement_response(resp.text);
      parsed = true;
    } catch (const ParseError& ex) {
      if (attempt == 1) {
        rec_.note += std::string(rec_.note.empty() ? "" : "; ") +
                     "refinement unparseable, proceeding without: " + ex.what();
        return std::nullopt;
      }
    }
  }

  auto [new_graph, report] = wm::apply_diff(level.graph, outcome.diff);
  level.graph = std::move(new_graph);
  if (!report.clean()) {
    rec_.note += std::string(rec_.note.empty() ? "" : "; ") + "diff applied with " +
                 std::to_string(report.unmatched_removals.size()) +
                 " unmatched removals";
  }
  if (!outcome.current_vertex.empty()) level.current_vertex = outcome.current_vertex;
  level.remind = outcome.remind;
  if (outcome.ineffective && effect_flag == "changed") ++ineffective_streak_;

  if (outcome.revised_plan_text) {
    plan::ParseResult reparsed = plan::parse_plan(*outcome.revised_plan_text);
    if (reparsed.ok()) {
      for (const auto& [app, sub] : outcome.added_other_app_calls) {
        if (outcome.revised_plan_text->find(sub) == std::string::npos) {
          rec_.note += std::string(rec_.note.empty() ? "" : "; ") +
                       "declared other-app call missing from revised plan: " + app;
        }
      }
      level.plan_source = reparsed.program->source_text;
      return plan::make_exec_state(reparsed.program);
    }
    rec_.note += std::string(rec_.note.empty() ? "" : "; ") +
                 "revised plan had syntax errors, keeping current plan";
  }
  return std::nullopt;
}

bool EpisodeRunner::eval_is_true(AgentLevel& level, const plan::QueryTrue& q) {
  std::map<std::string, std::string> aux = {
      {"statement", q.statement},
      {"compare_screen", q.compare_screen ? "true" : "false"},
      {"goal", level.goal}};
  std::string prompt = "Given the current screen, is the following statement true: " +
                       q.statement + "? Answer True or False.";
  if (q.compare_screen)
    prompt += " Compare against the previous screen where relevant.";

  for (int attempt = 0; attempt < 2; ++attempt) {
    ModelResponse resp = call(RequestKind::QueryTrue, prompt, aux, true, q.compare_screen);
    std::string t = to_lower(trim(resp.text));
    if (t == "true") return true;
    if (t == "false") return false;
  }
  rec_.note += std::string(rec_.note.empty() ? "" : "; ") +
               "non-boolean truth response twice, assuming False";
  return false;
}

void EpisodeRunner::handle_wait() {
  prev_obs_ = obs_;
  auto [next, nobs] = device_.tick(state_);
  state_ = next;
  obs_ = nobs;
  backend_.observe_state(state_);
  rec_.obs_digest = obs_.digest();
  check_success_now();
}

EpisodeRunner::LevelResult EpisodeRunner::run_agent(const std::string& goal,
                                                    const std::string& app, int depth) {
  AgentLevel level;
  level.goal = goal;
  level.app_name = app;
  level.depth = depth;

  init_level(level);
  plan::PlanProgramPtr program = request_plan(level, /*with_observation=*/true);
  plan::ExecState exec = plan::make_exec_state(program);

  if (depth == 0) {
    final_graph_ = level.graph;
  }

  std::optional<plan::EffectResult> pending;
  while (true) {
    auto [next, effect] = plan::step(std::move(exec), pending);
    exec = std::move(next);
    pending.reset();

    if (exec.status == plan::ExecStatus::Finished) {
      if (depth == 0) final_graph_ = level.graph;
      return {true, exec.finish_message};
    }
    if (exec.status == plan::ExecStatus::Failed) {
      throw FatalEpisodeError{"plan runtime error: " +
                              (exec.error ? exec.error->message : "unknown")};
    }
    if (!effect) throw FatalEpisodeError{"interpreter yielded no effect while running"};

    if (++effects_ > int64_t(50) * cfg_.max_steps) throw BudgetExceeded{};

    if (auto* e = std::get_if<plan::DoEdge>(&*effect)) {
      begin_record(plan::effect_to_string(*effect), depth);
      std::optional<sim::ActionCommand> cmd = ground(level, *e);
      std::string cmd_str;
      if (cmd) {
        execute_command(level, *e, *cmd);
        cmd_str = rec_.action;
      } else {
        rec_.effect_flag = "no_effect";
        rec_.note += std::string(rec_.note.empty() ? "" : "; ") + "grounding failure";
        ++ineffective_streak_;
      }
      std::optional<plan::ExecState> swapped =
          refine(level, *e, cmd_str, cmd ? rec_.effect_flag : "no_effect");
      end_record();
      if (depth == 0) final_graph_ = level.graph;
      if (swapped) {
        exec.poisoned = true;
        discarded_.push_back(exec);
        exec = std::move(*swapped);
        pending.reset();
      } else {
        pending = plan::EffectResult{std::monostate{}};
      }
    } else if (auto* q = std::get_if<plan::QueryTrue>(&*effect)) {
      begin_record(plan::effect_to_string(*effect), depth);
      bool answer = eval_is_true(level, *q);
      end_record();
      pending = plan::EffectResult{answer};
    } else if (std::holds_alternative<plan::DoWait>(*effect)) {
      begin_record(plan::effect_to_string(*effect), depth);
      handle_wait();
      end_record();
      pending = plan::EffectResult{std::monostate{}};
    } else if (auto* s = std::get_if<plan::SpawnSubAgent>(&*effect)) {
      begin_record(plan::effect_to_string(*effect), depth);
      if (depth + 1 > cfg_.max_subagent_depth) {
        rec_.note = "sub-agent depth limit";
        end_record();
        pending = plan::EffectResult{std::string("sub-agent depth limit")};
      } else {
        end_record();
        LevelResult child = run_agent(s->sub_task, s->app_name, depth + 1);
        pending = plan::EffectResult{child.completed
                                         ? child.message
                                         : "sub-agent failed: " + child.message};
      }
    } else if (auto* f = std::get_if<plan::Finished>(&*effect)) {
      if (depth == 0) final_graph_ = level.graph;
      return {true, f->message};
    }
  }
}

EpisodeResult EpisodeRunner::run() {
  trace_.task_id = task_.task_id;
  trace_.backend_name = backend_.name();
  trace_.app_name = task_.app_name;
  trace_.goal = task_.goal;
  trace_.grid_rows = cfg_.grid_rows;
  trace_.grid_cols = cfg_.grid_cols;

  EpisodeResult result;
  try {
    auto [state, obs] = device_.reset(task_);
    state_ = state;
    obs_ = obs;
    backend_.observe_state(state_);
    check_success_now();

    LevelResult top = run_agent(task_.goal, task_.app_name, 0);

    bool success = task_.success.is_null()
                       ? top.completed
                       : device_.check_success(task_, state_, cmd_history_);
    if (success) {
      result.outcome.status = EpisodeStatus::Success;
      if (first_success_ < 0) first_success_ = t_;
    } else {
      result.outcome.status = EpisodeStatus::Failure;
      trace_.early_finish = true;  // agent declared done, predicate says otherwise
    }
    result.outcome.finish_reason = "plan_return(" + top.message + ")";
  } catch (const BudgetExceeded&) {
    bool success = !task_.success.is_null() &&
                   device_.check_success(task_, state_, cmd_history_);
    result.outcome.status =
        success ? EpisodeStatus::Success : EpisodeStatus::BudgetExhausted;
    result.outcome.finish_reason = "step_limit";
    if (rec_open_) end_record();
  } catch (const FatalEpisodeError& e) {
    result.outcome.status = EpisodeStatus::Error;
    result.outcome.finish_reason = "unrecoverable_error(" + e.reason + ")";
    if (rec_open_) end_record();
  } catch (const BackendError& e) {
    result.outcome.status = EpisodeStatus::Error;
    result.outcome.finish_reason = std::string("unrecoverable_error(backend: ") +
                                   e.what() + ")";
    if (rec_open_) end_record();
  }

  result.outcome.final_graph = final_graph_;
  trace_.status = status_name(result.outcome.status);
  trace_.finish_reason = result.outcome.finish_reason;
  trace_.executed_actions = t_;
  trace_.first_success_step = first_success_;
  trace_.final_graph_text = wm::serialize_graph(final_graph_);

  if (!cfg_.store_dir.empty() && result.outcome.status != EpisodeStatus::Error) {
    wm::GraphStore store(cfg_.store_dir);
    store.save(final_graph_, task_.app_name);
  }

  result.trace = std::move(trace_);
  result.discarded_states = std::move(discarded_);
  return result;
}

}  // namespace

EpisodeResult run_episode(const sim::Device& device, const sim::TaskSpec& task,
                          backend::Backend& backend, const AgentConfig& config,
                          const prompts::TemplateSet& templates) {
  EpisodeRunner runner(device, task, backend, config, templates);
  return runner.run();
}

}  // namespace fpwc::agent

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fpwc/agent.hpp"
#include "fake_backend.hpp"
#include "test_paths.hpp"

using namespace fpwc;
using backend::RequestKind;
using testutil::FakeBackend;

namespace {

const prompts::TemplateSet& templates() {
  static prompts::TemplateSet set = prompts::TemplateSet::load();
  return set;
}

sim::Device load_device(const std::string& suite_rel, sim::Suite* out_suite) {
  *out_suite = sim::load_suite_file(testutil::fixture_dir() + suite_rel);
  sim::Device d;
  for (const auto& app : out_suite->apps) d.register_app(app);
  return d;
}

const std::string kWifiPlanBody =
    "def new_plan():\n"
    "    E(\"Homepage of the phone\", \"tap the Settings icon\")\n"
    "    E(\"Main page of the Settings app\", \"tap the Network item\")\n"
    "    E(\"Network & internet settings\", \"tap the Wi-Fi item\")\n"
    "    E(\"Wi-Fi (WLAN) settings\", \"tap the WLAN switch\")\n"
    "    return \"Task completed\"\n";

}  // namespace

TEST_CASE("a straight-line plan drives the task to success") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);
  FakeBackend fb;
  testutil::install_default_responders(fb, kWifiPlanBody);

  agent::AgentConfig cfg;
  agent::EpisodeResult r =
      agent::run_episode(device, *suite.find_task("enable_wifi"), fb, cfg, templates());

  CHECK(r.outcome.status == agent::EpisodeStatus::Success);
  CHECK(r.outcome.finish_reason == "plan_return(Task completed)");
  CHECK(r.trace.status == "success");
  CHECK_FALSE(r.trace.early_finish);
  CHECK(r.trace.executed_actions == 4);
  CHECK(r.trace.first_success_step == 4);
  CHECK(r.trace.total_input_tokens > 0);

  // Every element action grounded on its first candidate and went through one
  // refinement call.
  int edge_steps = 0;
  for (const auto& s : r.trace.steps) {
    if (s.action.empty()) continue;
    ++edge_steps;
    REQUIRE(s.grounding.size() == 1);
    CHECK(s.grounding[0].mode == "elements");
    CHECK(s.grounding[0].accepted);
    CHECK(s.effect_flag == "changed");
    bool refined = false;
    for (const auto& c : s.model_calls) refined |= c.kind == "Refine";
    CHECK(refined);
  }
  CHECK(edge_steps == 4);
  CHECK(fb.of_kind(RequestKind::InitGraph).size() == 1);
  CHECK(fb.of_kind(RequestKind::Refine).size() == 4);
  // The refined graph survives into the outcome.
  CHECK(r.outcome.final_graph.vertices.size() == 2);
}

TEST_CASE("rejected element candidates fall back to the numbered grid") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);

  sim::TaskSpec task;
  task.task_id = "grid_probe";
  task.goal = "poke the mystery element";
  task.app_name = "Settings";
  task.initial_screen = "main";

  FakeBackend fb;
  testutil::install_default_responders(
      fb, "def new_plan():\n"
          "    E(\"Main page of the Settings app\", \"tap the mystery thing\")\n"
          "    return \"done\"\n");
  fb.responders[RequestKind::VerifyAction] = [](const backend::ModelRequest& req) {
    return req.aux.at("mode") == "grid" ? "True" : "False";
  };

  agent::AgentConfig cfg;
  agent::EpisodeResult r = agent::run_episode(device, task, fb, cfg, templates());

  REQUIRE(r.trace.steps.size() >= 3);
  const trace::StepRecord* edge = nullptr;
  for (const auto& s : r.trace.steps)
    if (!s.grounding.empty()) edge = &s;
  REQUIRE(edge != nullptr);

  // max_verify_attempts element candidates are rejected, then a grid candidate
  // is accepted.
  REQUIRE(static_cast<int>(edge->grounding.size()) == cfg.max_verify_attempts + 1);
  for (int i = 0; i < cfg.max_verify_attempts; ++i) {
    CHECK(edge->grounding[i].mode == "elements");
    CHECK_FALSE(edge->grounding[i].accepted);
  }
  CHECK(edge->grounding.back().mode == "grid");
  CHECK(edge->grounding.back().accepted);

  // The first rejection lands in the exclusion list of the next selection.
  auto selects = fb.of_kind(RequestKind::SelectAction);
  REQUIRE(selects.size() == 4);
  CHECK(selects[0].aux.at("excluded").empty());
  CHECK(selects[1].aux.at("excluded") == "1");
  CHECK(selects[2].aux.at("excluded") == "1");
  // Fresh screen digest in grid mode, so the exclusions reset.
  CHECK(selects[3].aux.at("excluded").empty());

  // One verification per mode: repeats of a known-wrong candidate skip it.
  CHECK(fb.of_kind(RequestKind::VerifyAction).size() == 2);
  CHECK(r.outcome.status == agent::EpisodeStatus::Success);
}

TEST_CASE("a revised plan replaces the running one mid-episode") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);

  FakeBackend fb;
  testutil::install_default_responders(
      fb, "def new_plan():\n"
          "    E(\"Homepage of the phone\", \"tap the Settings icon\")\n"
          "    E(\"Main page of the Settings app\", \"tap the Network item\")\n"
          "    return \"original\"\n");
  int refines = 0;
  fb.responders[RequestKind::Refine] = [&refines](const backend::ModelRequest&) {
    ++refines;
    if (refines > 1) return testutil::noop_refinement();
    return std::string(
        "Removed vertices:\n\nAdded vertices:\n\nRemoved edges:\n\nAdded edges:\n\n"
        "Successful and expected action: True\n"
        "Ineffective: False\n"
        "Revised plan:\n"
        "def new_plan():\n"
        "    return \"swapped\"\n"
        "Remind: \n");
  };

  sim::TaskSpec task = *suite.find_task("enable_wifi");
  task.success = sim::json();  // completion is whatever the plan declares
  agent::AgentConfig cfg;
  agent::EpisodeResult r = agent::run_episode(device, task, fb, cfg, templates());

  CHECK(r.outcome.status == agent::EpisodeStatus::Success);
  CHECK(r.outcome.finish_reason == "plan_return(swapped)");
  // Only the first action of the original plan ran.
  CHECK(r.trace.executed_actions == 1);

  // The superseded interpreter state is retained but can never be stepped.
  REQUIRE(r.discarded_states.size() == 1);
  CHECK(r.discarded_states[0].poisoned);
  plan::ExecState dead = r.discarded_states[0];
  CHECK_THROWS_AS(plan::step(std::move(dead), std::nullopt), Error);
}

TEST_CASE("sub-agent spawning respects the depth limit") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);

  FakeBackend fb;
  testutil::install_default_responders(
      fb, "def new_plan():\n"
          "    other_app_function(\"Settings\", \"enable Wi-Fi\")\n"
          "    return \"done\"\n");

  sim::TaskSpec task = *suite.find_task("enable_wifi");
  task.success = sim::json();
  agent::AgentConfig cfg;
  cfg.max_subagent_depth = 0;
  agent::EpisodeResult r = agent::run_episode(device, task, fb, cfg, templates());

  CHECK(r.outcome.status == agent::EpisodeStatus::Success);
  bool limited = false;
  for (const auto& s : r.trace.steps) limited |= s.note == "sub-agent depth limit";
  CHECK(limited);
  // No child level was initialized.
  CHECK(fb.of_kind(RequestKind::InitGraph).size() == 1);
}

TEST_CASE("the action budget stops the episode with step_limit") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);
  FakeBackend fb;
  testutil::install_default_responders(fb, kWifiPlanBody);

  agent::AgentConfig cfg;
  cfg.max_steps = 1;
  agent::EpisodeResult r =
      agent::run_episode(device, *suite.find_task("enable_wifi"), fb, cfg, templates());

  CHECK(r.outcome.status == agent::EpisodeStatus::BudgetExhausted);
  CHECK(r.outcome.finish_reason == "step_limit");
  CHECK(r.trace.status == "budget_exhausted");
  CHECK(r.trace.executed_actions == 1);
}

TEST_CASE("declaring success without meeting the goal is an early finish") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);
  FakeBackend fb;
  testutil::install_default_responders(fb, "def new_plan():\n    return \"done\"\n");

  agent::AgentConfig cfg;
  agent::EpisodeResult r =
      agent::run_episode(device, *suite.find_task("enable_wifi"), fb, cfg, templates());

  CHECK(r.outcome.status == agent::EpisodeStatus::Failure);
  CHECK(r.trace.early_finish);
  CHECK(r.trace.executed_actions == 0);
  CHECK(r.outcome.finish_reason == "plan_return(done)");
}

TEST_CASE("ambiguous truth answers degrade to False with a note") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);
  FakeBackend fb;
  testutil::install_default_responders(
      fb, "def new_plan():\n"
          "    if isTRUE(\"the stars are aligned\"):\n"
          "        return \"yes\"\n"
          "    return \"no\"\n");
  fb.responders[RequestKind::QueryTrue] = [](const auto&) { return "maybe"; };

  sim::TaskSpec task = *suite.find_task("enable_wifi");
  task.success = sim::json();
  agent::AgentConfig cfg;
  agent::EpisodeResult r = agent::run_episode(device, task, fb, cfg, templates());

  CHECK(r.outcome.finish_reason == "plan_return(no)");
  CHECK(fb.of_kind(RequestKind::QueryTrue).size() == 2);
  bool noted = false;
  for (const auto& s : r.trace.steps)
    noted |= s.note.find("non-boolean truth response") != std::string::npos;
  CHECK(noted);
}

TEST_CASE("a ground-truth episode crosses apps through a sub-agent") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/crossapp_suite.json", &suite);
  const sim::TaskSpec& task = *suite.find_task("subscribe_offline");
  backend::OracleBackend oracle = backend::OracleBackend::from_file(
      testutil::fixture_dir() + "/suites/oracle/subscribe_offline.json", device);

  agent::AgentConfig cfg;
  agent::EpisodeResult r = agent::run_episode(device, task, oracle, cfg, templates());

  CHECK(r.outcome.status == agent::EpisodeStatus::Success);
  CHECK(r.trace.executed_actions <= cfg.max_steps);
  bool child_steps = false;
  for (const auto& s : r.trace.steps) child_steps |= s.depth == 1;
  CHECK(child_steps);
  CHECK(r.trace.first_success_step >= 0);
}

TEST_CASE("the refined graph is persisted when a store directory is set") {
  sim::Suite suite;
  sim::Device device = load_device("/suites/bundled_suite.json", &suite);
  FakeBackend fb;
  testutil::install_default_responders(fb, kWifiPlanBody);

  agent::AgentConfig cfg;
  cfg.store_dir = testutil::temp_dir("agent_store");
  agent::EpisodeResult r =
      agent::run_episode(device, *suite.find_task("enable_wifi"), fb, cfg, templates());
  REQUIRE(r.outcome.status == agent::EpisodeStatus::Success);

  wm::GraphStore store(cfg.store_dir);
  auto loaded = store.load("Settings");
  REQUIRE(loaded.has_value());
  CHECK(loaded->structurally_equal(r.outcome.final_graph));
}

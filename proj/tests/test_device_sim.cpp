#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fpwc/device_sim.hpp"
#include "test_paths.hpp"

using namespace fpwc;
using sim::ActionCommand;

namespace {

sim::Suite bundled() {
  return sim::load_suite_file(testutil::fixture_dir() + "/suites/bundled_suite.json");
}

sim::Device bundled_device(const sim::Suite& suite) {
  sim::Device d;
  for (const auto& app : suite.apps) d.register_app(app);
  return d;
}

sim::json base_app() {
  return sim::json::parse(R"({
    "app_name": "Tiny",
    "initial_screen": "s1",
    "state_vars": {"flag": false},
    "screens": [
      {"id": "s1", "display_name": "First",
       "elements": [{"id": "b", "label": "Go", "kind": "button",
                     "bounds": [0.1, 0.1, 0.9, 0.2]}],
       "transitions": [{"element": "b", "action": "tap", "goto": "s2"}]},
      {"id": "s2", "display_name": "Second", "elements": [], "transitions": []}
    ]
  })");
}

}  // namespace

TEST_CASE("the bundled suite loads with ten tasks and three apps") {
  sim::Suite suite = bundled();
  CHECK(suite.apps.size() == 3);
  CHECK(suite.tasks.size() == 10);
  REQUIRE(suite.find_task("enable_wifi") != nullptr);
  CHECK(suite.find_task("enable_wifi")->optimal_steps == 4);
  CHECK(suite.find_task("nope") == nullptr);
}

TEST_CASE("app definition constraints are enforced at load time") {
  SUBCASE("oversized element") {
    sim::json doc = base_app();
    doc["screens"][0]["elements"][0]["bounds"] = {0.0, 0.0, 1.0, 0.5};
    CHECK_THROWS_AS(sim::load_app(doc), sim::LoadError);
  }
  SUBCASE("centers too close") {
    sim::json doc = base_app();
    doc["screens"][0]["elements"].push_back(
        {{"id", "b2"}, {"label", "Go2"}, {"kind", "button"},
         {"bounds", {0.1, 0.105, 0.9, 0.205}}});
    CHECK_THROWS_AS(sim::load_app(doc), sim::LoadError);
  }
  SUBCASE("mutually exclusive elements may overlap") {
    sim::json doc = base_app();
    doc["screens"][0]["elements"][0]["visible_when"] = {{"var", "flag"}};
    doc["screens"][0]["elements"].push_back(
        {{"id", "b2"}, {"label", "Go2"}, {"kind", "button"},
         {"visible_when", {{"not", {{"var", "flag"}}}}},
         {"bounds", {0.1, 0.105, 0.9, 0.205}}});
    CHECK_NOTHROW(sim::load_app(doc));
  }
  SUBCASE("duplicate element id") {
    sim::json doc = base_app();
    doc["screens"][0]["elements"].push_back(
        {{"id", "b"}, {"label", "Again"}, {"kind", "button"},
         {"bounds", {0.1, 0.5, 0.9, 0.6}}});
    CHECK_THROWS_AS(sim::load_app(doc), sim::LoadError);
  }
  SUBCASE("transition to an unknown screen") {
    sim::json doc = base_app();
    doc["screens"][0]["transitions"][0]["goto"] = "nowhere";
    CHECK_THROWS_AS(sim::load_app(doc), sim::LoadError);
  }
  SUBCASE("BACK and HOME are legal transition targets") {
    sim::json doc = base_app();
    doc["screens"][0]["transitions"][0]["goto"] = "HOME";
    CHECK_NOTHROW(sim::load_app(doc));
  }
}

TEST_CASE("reset lands on the home screen with one numbered icon per app") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
  CHECK(state.current_app.empty());
  REQUIRE(obs.entries.size() == 3);
  CHECK(obs.entries[0].label == "Settings");
  CHECK(obs.entries[1].label == "Contacts");
  CHECK(obs.entries[2].label == "Notes");
  CHECK(obs.mode == "elements");
  // Rendered text names the screen but exposes no internal screen ids.
  CHECK(obs.render_text().find("Home screen of the phone") != std::string::npos);
  CHECK(obs.render_text().find("main") == std::string::npos);
  CHECK(obs.digest().size() == 16);
}

TEST_CASE("the declared optimal action sequence completes each bundled task") {
  sim::Suite suite = bundled();
  for (const auto& task : suite.tasks) {
    CAPTURE(task.task_id);
    sim::Device device = bundled_device(suite);
    auto [state, obs] = device.reset(task);
    std::vector<std::string> history;
    REQUIRE(static_cast<int>(task.optimal_actions.size()) == task.optimal_steps);
    for (const auto& action : task.optimal_actions) {
      auto cmd = sim::command_from_string(action);
      REQUIRE(cmd.has_value());
      sim::ExecOutcome out = device.execute(state, *cmd);
      REQUIRE(out.flag == sim::EffectFlag::Changed);
      state = out.state;
      history.push_back(action);
    }
    REQUIRE(device.check_success(task, state, history));
  }
}

TEST_CASE("execution is a pure function of state and command") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
  sim::ExecOutcome a = device.execute(state, ActionCommand{sim::Tap{1}});
  sim::ExecOutcome b = device.execute(state, ActionCommand{sim::Tap{1}});
  CHECK(a.state == b.state);
  CHECK(a.observation.digest() == b.observation.digest());
}

TEST_CASE("ineffective actions report no_effect with an explanation") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
  state = device.execute(state, ActionCommand{sim::Tap{1}}).state;  // Settings main

  // Battery has no transition rule.
  sim::ExecOutcome dead = device.execute(state, ActionCommand{sim::Tap{3}});
  CHECK(dead.flag == sim::EffectFlag::NoEffect);

  sim::ExecOutcome stale = device.execute(state, ActionCommand{sim::Tap{42}});
  CHECK(stale.flag == sim::EffectFlag::NoEffect);
  CHECK(stale.note.find("stale element number") != std::string::npos);

  sim::ExecOutcome typed = device.execute(state, ActionCommand{sim::TextInput{"hi"}});
  CHECK(typed.flag == sim::EffectFlag::NoEffect);
  CHECK(typed.note == "no focused text field");
}

TEST_CASE("switch toggling, text input and long-press transitions") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);

  SUBCASE("WLAN switch flips the variable and reveals the network") {
    auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
    for (int k = 0; k < 3; ++k)
      state = device.execute(state, ActionCommand{sim::Tap{1}}).state;
    auto [wifi_obs, s2] = device.observe_elements(state);
    CHECK(wifi_obs.entries.size() == 1);  // HomeNet hidden while off
    CHECK(wifi_obs.entries[0].label == "WLAN: off");

    sim::ExecOutcome flipped = device.execute(s2, ActionCommand{sim::Tap{1}});
    CHECK(flipped.state.vars["wifi_enabled"] == sim::json(true));
    REQUIRE(flipped.observation.entries.size() == 2);
    CHECK(flipped.observation.entries[0].label == "WLAN: on");
    CHECK(flipped.observation.entries[1].label == "HomeNet");

    sim::ElementDetail crop = device.crop_query(flipped.state, 1);
    CHECK(crop.label == "WLAN: on");
    CHECK(crop.kind == "switch");
    CHECK(crop.state == "on");
  }

  SUBCASE("typing targets the lone visible text field") {
    auto [state, obs] = device.reset(*suite.find_task("rename_device"));
    state = device.execute(state, ActionCommand{sim::Tap{1}}).state;  // Settings
    state = device.execute(state, ActionCommand{sim::Tap{4}}).state;  // About
    sim::ExecOutcome typed =
        device.execute(state, ActionCommand{sim::TextInput{"My Phone"}});
    CHECK(typed.state.vars["device_name"] == sim::json("My Phone"));
  }

  SUBCASE("long-press fires only long_press rules") {
    auto [state, obs] = device.reset(*suite.find_task("delete_alice"));
    state = device.execute(state, ActionCommand{sim::Tap{2}}).state;  // Contacts
    state = device.execute(state, ActionCommand{sim::Tap{2}}).state;  // Alice
    sim::ExecOutcome tapped = device.execute(state, ActionCommand{sim::Tap{2}});
    CHECK(tapped.state.vars["alice_deleted"] == sim::json(false));
    sim::ExecOutcome pressed = device.execute(state, ActionCommand{sim::LongPress{2}});
    CHECK(pressed.state.vars["alice_deleted"] == sim::json(true));
    // The rule's BACK target pops to the contact list, where Alice is gone.
    bool alice_visible = false;
    for (const auto& e : pressed.observation.entries) alice_visible |= e.label == "Alice";
    CHECK_FALSE(alice_visible);
  }
}

TEST_CASE("scrolling is paged and clamped") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("empty_trash"));
  state = device.execute(state, ActionCommand{sim::Tap{3}}).state;  // Notes

  sim::ExecOutcome down =
      device.execute(state, ActionCommand{sim::Swipe{0, sim::Direction::Down}});
  CHECK(down.flag == sim::EffectFlag::Changed);
  REQUIRE(down.observation.entries.size() == 1);
  CHECK(down.observation.entries[0].label == "Empty trash");

  sim::ExecOutcome again =
      device.execute(down.state, ActionCommand{sim::Swipe{0, sim::Direction::Down}});
  CHECK(again.flag == sim::EffectFlag::NoEffect);
  CHECK(again.note == "scroll already at the edge");
}

TEST_CASE("back pops the stack, then exits the app") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
  state = device.execute(state, ActionCommand{sim::Tap{1}}).state;
  state = device.execute(state, ActionCommand{sim::Tap{1}}).state;
  CHECK(state.nav_stack.size() == 2);
  state = device.execute(state, ActionCommand{sim::BackCmd{}}).state;
  CHECK(state.nav_stack.size() == 1);
  state = device.execute(state, ActionCommand{sim::BackCmd{}}).state;
  CHECK(state.current_app.empty());
  sim::ExecOutcome home = device.execute(state, ActionCommand{sim::BackCmd{}});
  CHECK(home.flag == sim::EffectFlag::NoEffect);
}

TEST_CASE("finish marks the episode flag without touching the app") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
  sim::ExecOutcome fin = device.execute(state, ActionCommand{sim::FinishCmd{}});
  CHECK(fin.state.finished);
  CHECK(fin.state.current_app.empty());
}

TEST_CASE("grid observation numbers every cell") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
  state = device.execute(state, ActionCommand{sim::Tap{1}}).state;

  auto [gobs, gstate] = device.observe_grid(state, 9, 6);
  CHECK(gobs.mode == "grid");
  CHECK(gobs.entries.size() == 54);
  CHECK(gstate.grid_mode);
  CHECK(gobs.digest() != device.observe_elements(state).first.digest());

  // SwipeGrid with a downward row delta scrolls like a swipe.
  sim::ExecOutcome bad = device.execute(state, ActionCommand{sim::SwipeGrid{2, 8}});
  CHECK(bad.note == "SwipeGrid outside grid mode");
}

TEST_CASE("action command strings round trip") {
  std::vector<ActionCommand> cmds = {
      ActionCommand{sim::Tap{3}},
      ActionCommand{sim::LongPress{2}},
      ActionCommand{sim::Swipe{1, sim::Direction::Down, sim::SwipeDistance::Medium}},
      ActionCommand{sim::SwipeGrid{2, 8}},
      ActionCommand{sim::TextInput{"hello world"}},
      ActionCommand{sim::BackCmd{}},
      ActionCommand{sim::FinishCmd{}},
  };
  for (const auto& cmd : cmds) {
    std::string s = sim::command_to_string(cmd);
    auto back = sim::command_from_string(s);
    REQUIRE(back.has_value());
    CHECK(sim::command_to_string(*back) == s);
  }
  CHECK(sim::command_to_string(cmds[0]) == "Tap(3)");
  CHECK(sim::command_to_string(cmds[4]) == "Text(hello world)");
  CHECK_FALSE(sim::command_from_string("Teleport(1)").has_value());
}

TEST_CASE("timers fire after their tick threshold and replace the top screen") {
  sim::json doc = sim::json::parse(R"({
    "app_name": "Timers",
    "initial_screen": "connecting",
    "state_vars": {"done": false},
    "screens": [
      {"id": "connecting", "display_name": "Connecting",
       "elements": [{"id": "sp", "label": "Spinner", "kind": "static",
                     "bounds": [0.1, 0.1, 0.9, 0.2]}],
       "transitions": []},
      {"id": "ready", "display_name": "Connected",
       "elements": [{"id": "ok", "label": "OK", "kind": "static",
                     "bounds": [0.1, 0.1, 0.9, 0.2]}],
       "transitions": []}
    ],
    "timers": [{"after_ticks": 2, "set": {"done": true}, "goto": "ready"}]
  })");
  sim::Device device;
  device.register_app(sim::load_app(doc));

  sim::TaskSpec task;
  task.task_id = "t";
  task.goal = "wait for the connection";
  task.app_name = "Timers";
  task.initial_screen = "connecting";
  task.success = {{"var", "done"}};

  auto [state, obs] = device.reset(task);
  CHECK(obs.screen_text == "Connecting");
  auto [s1, o1] = device.tick(state);
  CHECK(o1.screen_text == "Connecting");  // one tick is not enough
  auto [s2, o2] = device.tick(s1);
  CHECK(o2.screen_text == "Connected");
  CHECK(s2.vars["done"] == sim::json(true));
  CHECK(device.check_success(task, s2, {}));
}

TEST_CASE("predicates cover conjunction, negation and history") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));

  sim::json pred = {{"all", {{{"not", {{"var", "wifi_enabled"}}}},
                             {{"var", "device_name"}, {"equals", "Pixel"}}}}};
  CHECK(device.eval_predicate(pred, state));

  std::vector<std::string> history = {"Tap(1)", "Text(hello)"};
  sim::json hist = {{"history_contains", "Text(hello)"}};
  CHECK(device.eval_predicate(hist, state, &history));
  sim::json miss = {{"history_contains", "Swipe"}};
  CHECK_FALSE(device.eval_predicate(miss, state, &history));
}

TEST_CASE("cross-app state is shared through the merged variable pool") {
  sim::Suite cross =
      sim::load_suite_file(testutil::fixture_dir() + "/suites/crossapp_suite.json");
  sim::Device device;
  for (const auto& app : cross.apps) device.register_app(app);
  auto [state, obs] = device.reset(*cross.find_task("subscribe_offline"));

  state = device.execute(state, ActionCommand{sim::Tap{1}}).state;  // Media
  auto [mobs, ms] = device.observe_elements(state);
  REQUIRE(mobs.entries.size() == 1);
  CHECK(mobs.entries[0].label == "No internet connection");

  // Enabling Wi-Fi in Settings changes what Media shows.
  state = ms;
  state.vars["wifi_enabled"] = true;
  auto [mobs2, ms2] = device.observe_elements(state);
  REQUIRE(mobs2.entries.size() == 1);
  CHECK(mobs2.entries[0].label == "Subscribe to MrBeast");
}

TEST_CASE("unknown initial overrides and screens are rejected at reset") {
  sim::Suite suite = bundled();
  sim::Device device = bundled_device(suite);
  sim::TaskSpec task = *suite.find_task("enable_wifi");
  task.initial_vars = {{"no_such_var", 1}};
  CHECK_THROWS_AS(device.reset(task), Error);
  task.initial_vars = sim::json();
  task.initial_screen = "nowhere";
  CHECK_THROWS_AS(device.reset(task), Error);
}

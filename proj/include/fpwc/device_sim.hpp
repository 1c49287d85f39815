#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fpwc/util.hpp"
#include "nlohmann/json.hpp"

namespace fpwc::sim {

using json = nlohmann::json;

class LoadError : public Error {
public:
  using Error::Error;
};

// Element geometry constraints enforced at app load time.
constexpr double kMaxElementAreaFraction = 0.25;
constexpr double kMinCenterSpacing = 0.02;

struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return (x1 - x0) * (y1 - y0); }
  double cx() const { return (x0 + x1) / 2; }
  double cy() const { return (y0 + y1) / 2; }
};

enum class ElementKind { Button, Switch, TextField, ListItem, Static };
std::string element_kind_name(ElementKind k);

struct UiElement {
  std::string id;
  std::string label;  // may contain {var} slots rendered from state_vars
  ElementKind kind = ElementKind::Button;
  Rect bounds;
  int page = 0;
  json visible_when;      // predicate or null
  std::string state_var;  // switch: toggled var; text_field: typed-into var
};

struct TransitionRule {
  std::string element;  // element id, or empty when gesture-triggered
  std::string gesture;  // swipe_up | swipe_down | swipe_left | swipe_right
  std::string action = "tap";  // tap | long_press
  json when;                   // predicate or null
  json set;                    // {var: value}
  std::string goto_screen;     // screen id, "BACK", "HOME", or empty
};

struct ScreenDef {
  std::string id;
  std::string display_name;
  std::vector<UiElement> elements;
  std::vector<TransitionRule> transitions;
  int scroll_extent = 1;
};

struct TimerRule {
  int after_ticks = 1;
  json when;
  json set;
  std::string goto_screen;
};

struct AppDefinition {
  std::string app_name;
  std::string initial_screen;
  std::vector<ScreenDef> screens;
  json state_vars;  // object: name -> initial value (bool/int/string)
  std::vector<TimerRule> timers;

  const ScreenDef* find_screen(const std::string& id) const;
};

AppDefinition load_app(const json& doc);
AppDefinition load_app_file(const std::string& path);

// The simulator's ground-truth state. Values are plain data; execute() is a
// pure (state, cmd) -> (state', obs) function on them.
struct DeviceState {
  std::string current_app;             // empty at the home screen
  std::vector<std::string> nav_stack;  // never empty while inside an app
  int scroll_page = 0;
  json vars;  // union of all loaded apps' state_vars
  std::string focused_field;
  int64_t clock = 0;
  int ticks_on_screen = 0;
  bool finished = false;

  // Numbering context of the most recent observation.
  bool grid_mode = false;
  int grid_rows = 0, grid_cols = 0;

  bool operator==(const DeviceState&) const = default;
};

struct ObsEntry {
  int number = 0;
  std::string label;
  std::string kind;
  Rect bounds;
};

struct Observation {
  std::string mode;  // "elements" | "grid"
  std::vector<ObsEntry> entries;
  std::string screen_text;
  int width = 1080, height = 2220;

  std::string render_text() const;  // numbered-element block for prompts
  std::string digest() const;
};

enum class Direction { Up, Down, Left, Right, UpLeft, UpRight, DownLeft, DownRight };
enum class SwipeDistance { Short, Medium, Long };

struct Tap {
  int number;
};
struct LongPress {
  int number;
};
struct Swipe {
  int number;
  Direction direction;
  SwipeDistance distance = SwipeDistance::Medium;
};
struct SwipeGrid {
  int start_number;
  int end_number;
};
struct TextInput {
  std::string text;
};
struct BackCmd {};
struct FinishCmd {};

using ActionCommand =
    std::variant<Tap, LongPress, Swipe, SwipeGrid, TextInput, BackCmd, FinishCmd>;

std::string command_to_string(const ActionCommand& cmd);
std::optional<ActionCommand> command_from_string(const std::string& text);

enum class EffectFlag { Changed, NoEffect };

struct ExecOutcome {
  DeviceState state;
  Observation observation;
  EffectFlag flag = EffectFlag::Changed;
  std::string note;  // stale-reference or other no-effect explanation
};

struct ElementDetail {
  std::string label;
  std::string kind;
  std::string state;  // "on"/"off" for switches, current text for fields
  Rect bounds;
};

struct TaskSpec {
  std::string task_id;
  std::string goal;
  std::string app_name;
  json initial_vars;           // overrides applied at reset
  std::string initial_screen;  // empty -> home screen
  json success;                // predicate; null for model-authored sub-tasks
  int optimal_steps = 1;
  std::vector<std::string> optimal_actions;  // for CR prefix matching
};

class Device {
public:
  void register_app(AppDefinition app);
  const std::vector<AppDefinition>& apps() const { return apps_; }
  const AppDefinition* find_app(const std::string& name) const;

  std::pair<DeviceState, Observation> reset(const TaskSpec& task) const;
  ExecOutcome execute(const DeviceState& state, const ActionCommand& cmd) const;
  std::pair<Observation, DeviceState> observe_elements(const DeviceState& state) const;
  std::pair<Observation, DeviceState> observe_grid(const DeviceState& state, int rows,
                                                   int cols) const;
  // wait(): one clock tick, timer rules applied, screen re-rendered.
  std::pair<DeviceState, Observation> tick(const DeviceState& state) const;

  ElementDetail crop_query(const DeviceState& state, int number) const;

  bool check_success(const TaskSpec& task, const DeviceState& state,
                     const std::vector<std::string>& action_history) const;

  // Evaluates a fixture predicate against state (+ optional history).
  bool eval_predicate(const json& pred, const DeviceState& state,
                      const std::vector<std::string>* history = nullptr) const;

  // Visible elements of the current screen/page, constraint-checked.
  std::vector<const UiElement*> visible_elements(const DeviceState& state) const;
  const ScreenDef* current_screen(const DeviceState& state) const;
  std::string rendered_label(const UiElement& el, const DeviceState& state) const;

private:
  DeviceState apply_timers(DeviceState state) const;
  std::vector<AppDefinition> apps_;
  json initial_vars_;  // merged from all apps
};

struct Suite {
  std::string name;
  std::vector<AppDefinition> apps;
  std::vector<TaskSpec> tasks;

  const TaskSpec* find_task(const std::string& id) const;
};

Suite load_suite_file(const std::string& path);

}  // namespace fpwc::sim

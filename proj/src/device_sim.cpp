#include "fpwc/device_sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fpwc::sim {

using util::to_lower;
using util::trim;

std::string element_kind_name(ElementKind k) {
  switch (k) {
    case ElementKind::Button: return "button";
    case ElementKind::Switch: return "switch";
    case ElementKind::TextField: return "text_field";
    case ElementKind::ListItem: return "list_item";
    case ElementKind::Static: return "static";
  }
  return "button";
}

namespace {

ElementKind kind_from_string(const std::string& s, const std::string& path) {
  std::string k = to_lower(s);
  if (k == "button") return ElementKind::Button;
  if (k == "switch") return ElementKind::Switch;
  if (k == "text_field") return ElementKind::TextField;
  if (k == "list_item") return ElementKind::ListItem;
  if (k == "static") return ElementKind::Static;
  throw LoadError(path + ": unknown element kind '" + s + "'");
}

Rect rect_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4)
    throw LoadError(path + ": bounds must be [x0, y0, x1, y1]");
  Rect r{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (r.x1 <= r.x0 || r.y1 <= r.y0 || r.x0 < 0 || r.y0 < 0 || r.x1 > 1 || r.y1 > 1)
    throw LoadError(path + ": bounds outside the unit square or inverted");
  return r;
}

bool var_truthy(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() != 0;
  if (v.is_string()) return !v.get<std::string>().empty();
  return false;
}

}  // namespace

const ScreenDef* AppDefinition::find_screen(const std::string& id) const {
  for (const auto& s : screens)
    if (s.id == id) return &s;
  return nullptr;
}

AppDefinition load_app(const json& doc) {
  AppDefinition app;
  if (!doc.is_object()) throw LoadError("app definition must be an object");
  if (!doc.contains("app_name") || !doc["app_name"].is_string())
    throw LoadError("app definition missing 'app_name'");
  app.app_name = doc["app_name"].get<std::string>();
  const std::string base = "app '" + app.app_name + "'";

  app.state_vars = doc.value("state_vars", json::object());
  if (!app.state_vars.is_object()) throw LoadError(base + ": state_vars must be an object");

  if (!doc.contains("screens") || !doc["screens"].is_array())
    throw LoadError(base + ": missing 'screens' array");

  std::set<std::string> screen_ids;
  for (const auto& js : doc["screens"]) {
    ScreenDef screen;
    screen.id = js.at("id").get<std::string>();
    const std::string spath = base + " screen '" + screen.id + "'";
    if (!screen_ids.insert(screen.id).second)
      throw LoadError(base + ": duplicate screen id '" + screen.id + "'");
    screen.display_name = js.value("display_name", screen.id);
    screen.scroll_extent = js.value("scroll_extent", 1);
    if (screen.scroll_extent < 1)
      throw LoadError(spath + ": scroll_extent must be >= 1");

    std::set<std::string> element_ids;
    for (const auto& je : js.value("elements", json::array())) {
      UiElement el;
      el.id = je.at("id").get<std::string>();
      const std::string epath = spath + " element '" + el.id + "'";
      if (!element_ids.insert(el.id).second)
        throw LoadError(spath + ": duplicate element id '" + el.id + "'");
      el.label = je.value("label", el.id);
      el.kind = kind_from_string(je.value("kind", "button"), epath);
      el.bounds = rect_from_json(je.at("bounds"), epath);
      el.page = je.value("page", 0);
      el.visible_when = je.value("visible_when", json());
      el.state_var = je.value("state_var", "");
      if (el.bounds.area() > kMaxElementAreaFraction + 1e-12)
        throw LoadError(epath + ": bounds occupy more than a quarter of the screen");
      if (el.page < 0 || el.page >= screen.scroll_extent)
        throw LoadError(epath + ": page outside scroll_extent");
      screen.elements.push_back(std::move(el));
    }

    // Spacing constraint between elements that can be co-visible.
    for (size_t i = 0; i < screen.elements.size(); ++i) {
      for (size_t j = i + 1; j < screen.elements.size(); ++j) {
        const auto& a = screen.elements[i];
        const auto& b = screen.elements[j];
        if (a.page != b.page) continue;
        if (a.visible_when != b.visible_when) continue;  // may never co-occur
        double dx = a.bounds.cx() - b.bounds.cx();
        double dy = a.bounds.cy() - b.bounds.cy();
        if (std::sqrt(dx * dx + dy * dy) <= kMinCenterSpacing)
          throw LoadError(spath + ": elements '" + a.id + "' and '" + b.id +
                          "' violate the center spacing threshold");
      }
    }

    for (const auto& jt : js.value("transitions", json::array())) {
      TransitionRule rule;
      rule.element = jt.value("element", "");
      rule.gesture = jt.value("gesture", "");
      rule.action = jt.value("action", "tap");
      rule.when = jt.value("when", json());
      rule.set = jt.value("set", json());
      rule.goto_screen = jt.value("goto", "");
      if (rule.element.empty() == rule.gesture.empty())
        throw LoadError(spath + ": transition must name exactly one of element/gesture");
      if (!rule.element.empty() && !element_ids.count(rule.element))
        throw LoadError(spath + ": transition references unknown element '" +
                        rule.element + "'");
      screen.transitions.push_back(std::move(rule));
    }
    app.screens.push_back(std::move(screen));
  }

  app.initial_screen = doc.value("initial_screen", "");
  if (!screen_ids.count(app.initial_screen))
    throw LoadError(base + ": initial_screen '" + app.initial_screen + "' does not exist");

  for (const auto& js : doc["screens"]) {
    for (const auto& jt : js.value("transitions", json::array())) {
      std::string target = jt.value("goto", "");
      if (!target.empty() && target != "BACK" && target != "HOME" &&
          !screen_ids.count(target))
        throw LoadError(base + ": transition targets unknown screen '" + target + "'");
    }
  }

  for (const auto& jt : doc.value("timers", json::array())) {
    TimerRule timer;
    timer.after_ticks = jt.value("after_ticks", 1);
    timer.when = jt.value("when", json());
    timer.set = jt.value("set", json());
    timer.goto_screen = jt.value("goto", "");
    if (!timer.goto_screen.empty() && timer.goto_screen != "BACK" &&
        !screen_ids.count(timer.goto_screen))
      throw LoadError(base + ": timer targets unknown screen '" + timer.goto_screen + "'");
    app.timers.push_back(std::move(timer));
  }
  return app;
}

AppDefinition load_app_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open app definition: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw LoadError("invalid JSON in " + path + ": " + e.what());
  }
  return load_app(doc);
}

// ---------------------------------------------------------------------------
// Observation
// ---------------------------------------------------------------------------

std::string Observation::render_text() const {
  std::ostringstream os;
  os << "Screen: " << screen_text << "\n";
  os << "Mode: " << mode << "\n";
  for (const auto& e : entries) {
    os << e.number << ". " << e.label;
    if (!e.kind.empty()) os << " [" << e.kind << "]";
    char buf[80];
    std::snprintf(buf, sizeof(buf), " (%.3f,%.3f,%.3f,%.3f)", e.bounds.x0, e.bounds.y0,
                  e.bounds.x1, e.bounds.y1);
    os << buf << "\n";
  }
  return os.str();
}

std::string Observation::digest() const { return util::fnv1a_hex(render_text()); }

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

std::string direction_name(Direction d) {
  switch (d) {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
    case Direction::UpLeft: return "up_left";
    case Direction::UpRight: return "up_right";
    case Direction::DownLeft: return "down_left";
    case Direction::DownRight: return "down_right";
  }
  return "down";
}

std::optional<Direction> direction_from(const std::string& s) {
  std::string d = to_lower(trim(s));
  if (d == "up") return Direction::Up;
  if (d == "down") return Direction::Down;
  if (d == "left") return Direction::Left;
  if (d == "right") return Direction::Right;
  if (d == "up_left") return Direction::UpLeft;
  if (d == "up_right") return Direction::UpRight;
  if (d == "down_left") return Direction::DownLeft;
  if (d == "down_right") return Direction::DownRight;
  return std::nullopt;
}

std::string distance_name(SwipeDistance d) {
  switch (d) {
    case SwipeDistance::Short: return "short";
    case SwipeDistance::Medium: return "medium";
    case SwipeDistance::Long: return "long";
  }
  return "medium";
}

}  // namespace

std::string command_to_string(const ActionCommand& cmd) {
  std::ostringstream os;
  if (auto* t = std::get_if<Tap>(&cmd))
    os << "Tap(" << t->number << ")";
  else if (auto* l = std::get_if<LongPress>(&cmd))
    os << "LongPress(" << l->number << ")";
  else if (auto* s = std::get_if<Swipe>(&cmd))
    os << "Swipe(" << s->number << ", " << direction_name(s->direction) << ", "
       << distance_name(s->distance) << ")";
  else if (auto* g = std::get_if<SwipeGrid>(&cmd))
    os << "SwipeGrid(" << g->start_number << ", " << g->end_number << ")";
  else if (auto* x = std::get_if<TextInput>(&cmd))
    os << "Text(" << x->text << ")";
  else if (std::holds_alternative<BackCmd>(cmd))
    os << "Back";
  else
    os << "Finish";
  return os.str();
}

std::optional<ActionCommand> command_from_string(const std::string& text) {
  std::string t = trim(text);
  auto inner = [&](size_t open) { return t.substr(open + 1, t.rfind(')') - open - 1); };
  if (t == "Back") return ActionCommand{BackCmd{}};
  if (t == "Finish") return ActionCommand{FinishCmd{}};
  size_t open = t.find('(');
  if (open == std::string::npos || t.back() != ')') return std::nullopt;
  std::string head = t.substr(0, open);
  std::string args = inner(open);
  try {
    if (head == "Tap") return ActionCommand{Tap{std::stoi(args)}};
    if (head == "LongPress") return ActionCommand{LongPress{std::stoi(args)}};
    if (head == "Text") return ActionCommand{TextInput{args}};
    if (head == "Swipe") {
      std::vector<std::string> parts;
      std::stringstream ss(args);
      std::string p;
      while (std::getline(ss, p, ',')) parts.push_back(trim(p));
      if (parts.size() < 2) return std::nullopt;
      auto dir = direction_from(parts[1]);
      if (!dir) return std::nullopt;
      SwipeDistance dist = SwipeDistance::Medium;
      if (parts.size() > 2) {
        std::string d = to_lower(parts[2]);
        if (d == "short") dist = SwipeDistance::Short;
        if (d == "long") dist = SwipeDistance::Long;
      }
      return ActionCommand{Swipe{std::stoi(parts[0]), *dir, dist}};
    }
    if (head == "SwipeGrid") {
      size_t comma = args.find(',');
      if (comma == std::string::npos) return std::nullopt;
      return ActionCommand{
          SwipeGrid{std::stoi(trim(args.substr(0, comma))),
                    std::stoi(trim(args.substr(comma + 1)))}};
    }
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Device
// ---------------------------------------------------------------------------

void Device::register_app(AppDefinition app) {
  for (const auto& existing : apps_)
    if (existing.app_name == app.app_name)
      throw LoadError("app '" + app.app_name + "' registered twice");
  for (auto it = app.state_vars.begin(); it != app.state_vars.end(); ++it) {
    if (initial_vars_.contains(it.key()) && initial_vars_[it.key()] != it.value())
      throw LoadError("state_var '" + it.key() +
                      "' declared with conflicting initial values across apps");
    initial_vars_[it.key()] = it.value();
  }
  apps_.push_back(std::move(app));
}

const AppDefinition* Device::find_app(const std::string& name) const {
  std::string key = to_lower(trim(name));
  for (const auto& a : apps_)
    if (to_lower(a.app_name) == key) return &a;
  return nullptr;
}

const ScreenDef* Device::current_screen(const DeviceState& state) const {
  if (state.current_app.empty()) return nullptr;
  const AppDefinition* app = find_app(state.current_app);
  if (!app || state.nav_stack.empty()) return nullptr;
  return app->find_screen(state.nav_stack.back());
}

std::string Device::rendered_label(const UiElement& el, const DeviceState& state) const {
  std::string out;
  const std::string& tmpl = el.label;
  for (size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{') {
      size_t close = tmpl.find('}', i + 1);
      if (close != std::string::npos) {
        std::string var = tmpl.substr(i + 1, close - i - 1);
        if (state.vars.contains(var)) {
          const json& v = state.vars[var];
          out += v.is_string() ? v.get<std::string>() : v.dump();
          i = close;
          continue;
        }
      }
    }
    out.push_back(tmpl[i]);
  }
  if (el.kind == ElementKind::Switch && !el.state_var.empty()) {
    bool on = state.vars.contains(el.state_var) && var_truthy(state.vars[el.state_var]);
    out += on ? ": on" : ": off";
  }
  return out;
}

bool Device::eval_predicate(const json& pred, const DeviceState& state,
                            const std::vector<std::string>* history) const {
  if (pred.is_null()) return false;
  if (pred.is_boolean()) return pred.get<bool>();
  if (!pred.is_object()) throw Error("predicate must be an object or boolean");
  if (pred.contains("all")) {
    for (const auto& p : pred["all"])
      if (!eval_predicate(p, state, history)) return false;
    return true;
  }
  if (pred.contains("any")) {
    for (const auto& p : pred["any"])
      if (eval_predicate(p, state, history)) return true;
    return false;
  }
  if (pred.contains("not")) return !eval_predicate(pred["not"], state, history);
  if (pred.contains("var")) {
    std::string name = pred["var"].get<std::string>();
    if (!state.vars.contains(name))
      throw Error("predicate references unknown state_var '" + name + "'");
    if (pred.contains("equals")) return state.vars[name] == pred["equals"];
    return var_truthy(state.vars[name]);
  }
  if (pred.contains("screen")) {
    std::string want = pred["screen"].get<std::string>();
    if (pred.contains("app") &&
        to_lower(pred["app"].get<std::string>()) != to_lower(state.current_app))
      return false;
    return !state.nav_stack.empty() && state.nav_stack.back() == want;
  }
  if (pred.contains("app"))
    return to_lower(pred["app"].get<std::string>()) == to_lower(state.current_app);
  if (pred.contains("history_contains")) {
    if (!history) return false;
    std::string needle = pred["history_contains"].get<std::string>();
    for (const auto& h : *history)
      if (h.find(needle) != std::string::npos) return true;
    return false;
  }
  throw Error("unrecognized predicate: " + pred.dump());
}

std::vector<const UiElement*> Device::visible_elements(const DeviceState& state) const {
  std::vector<const UiElement*> out;
  const ScreenDef* screen = current_screen(state);
  if (!screen) return out;
  for (const auto& el : screen->elements) {
    if (el.page != state.scroll_page) continue;
    if (!el.visible_when.is_null() && !eval_predicate(el.visible_when, state)) continue;
    out.push_back(&el);
  }
  return out;
}

namespace {

// Home screen icon layout: two columns, rows top to bottom.
Rect home_icon_bounds(size_t index) {
  int row = static_cast<int>(index / 2);
  int col = static_cast<int>(index % 2);
  double x0 = 0.08 + col * 0.50;
  double y0 = 0.08 + row * 0.16;
  return Rect{x0, y0, x0 + 0.34, y0 + 0.10};
}

}  // namespace

std::pair<Observation, DeviceState> Device::observe_elements(
    const DeviceState& state) const {
  Observation obs;
  obs.mode = "elements";
  DeviceState next = state;
  next.grid_mode = false;
  next.grid_rows = next.grid_cols = 0;

  if (state.current_app.empty()) {
    obs.screen_text = "Home screen of the phone";
    int n = 1;
    for (size_t i = 0; i < apps_.size(); ++i) {
      obs.entries.push_back({n++, apps_[i].app_name, "button", home_icon_bounds(i)});
    }
    return {obs, next};
  }
  const ScreenDef* screen = current_screen(state);
  obs.screen_text = screen ? screen->display_name : "Unknown screen";
  int n = 1;
  for (const UiElement* el : visible_elements(state)) {
    obs.entries.push_back(
        {n++, rendered_label(*el, state), element_kind_name(el->kind), el->bounds});
  }
  return {obs, next};
}

std::pair<Observation, DeviceState> Device::observe_grid(const DeviceState& state,
                                                         int rows, int cols) const {
  if (rows < 1 || cols < 1) throw Error("grid mode requires rows, cols >= 1");
  Observation obs;
  obs.mode = "grid";
  const ScreenDef* screen = current_screen(state);
  obs.screen_text = state.current_app.empty() ? "Home screen of the phone"
                                              : (screen ? screen->display_name : "Unknown");
  int n = 1;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Rect cell{static_cast<double>(c) / cols, static_cast<double>(r) / rows,
                static_cast<double>(c + 1) / cols, static_cast<double>(r + 1) / rows};
      obs.entries.push_back({n++, "grid cell " + std::to_string(n - 1), "", cell});
    }
  }
  DeviceState next = state;
  next.grid_mode = true;
  next.grid_rows = rows;
  next.grid_cols = cols;
  return {obs, next};
}

std::pair<DeviceState, Observation> Device::reset(const TaskSpec& task) const {
  if (!task.app_name.empty() && !find_app(task.app_name))
    throw Error("unknown app '" + task.app_name + "'");
  DeviceState state;
  state.vars = initial_vars_;
  if (task.initial_vars.is_object()) {
    for (auto it = task.initial_vars.begin(); it != task.initial_vars.end(); ++it) {
      if (!state.vars.contains(it.key()))
        throw Error("task initial override names unknown state_var '" + it.key() + "'");
      state.vars[it.key()] = it.value();
    }
  }
  if (!task.initial_screen.empty()) {
    const AppDefinition* app = find_app(task.app_name);
    if (!app || !app->find_screen(task.initial_screen))
      throw Error("task initial screen '" + task.initial_screen + "' does not exist");
    state.current_app = app->app_name;
    state.nav_stack = {task.initial_screen};
  }
  auto [obs, next] = observe_elements(state);
  return {next, obs};
}

namespace {

void apply_set(DeviceState& state, const json& set) {
  if (!set.is_object()) return;
  for (auto it = set.begin(); it != set.end(); ++it) state.vars[it.key()] = it.value();
}

}  // namespace

DeviceState Device::apply_timers(DeviceState state) const {
  if (state.current_app.empty()) return state;
  const AppDefinition* app = find_app(state.current_app);
  if (!app) return state;
  for (const auto& timer : app->timers) {
    if (state.ticks_on_screen < timer.after_ticks) continue;
    if (!timer.when.is_null() && !eval_predicate(timer.when, state)) continue;
    apply_set(state, timer.set);
    if (!timer.goto_screen.empty()) {
      if (timer.goto_screen == "BACK") {
        if (state.nav_stack.size() > 1) state.nav_stack.pop_back();
      } else {
        state.nav_stack.back() = timer.goto_screen;  // timers replace, not push
      }
      state.scroll_page = 0;
      state.ticks_on_screen = 0;
      state.focused_field.clear();
    }
  }
  return state;
}

std::pair<DeviceState, Observation> Device::tick(const DeviceState& state) const {
  DeviceState next = state;
  next.clock += 1;
  next.ticks_on_screen += 1;
  next = apply_timers(std::move(next));
  auto [obs, next2] = next.grid_mode ? observe_grid(next, next.grid_rows, next.grid_cols)
                                     : observe_elements(next);
  return {next2, obs};
}

ExecOutcome Device::execute(const DeviceState& state, const ActionCommand& cmd) const {
  DeviceState next = state;
  std::string note;

  auto resolve_element = [&](int number) -> const UiElement* {
    if (state.grid_mode) {
      int cells = state.grid_rows * state.grid_cols;
      if (number < 1 || number > cells) return nullptr;
      int idx = number - 1;
      int r = idx / state.grid_cols, c = idx % state.grid_cols;
      double cx = (c + 0.5) / state.grid_cols;
      double cy = (r + 0.5) / state.grid_rows;
      for (const UiElement* el : visible_elements(state)) {
        if (cx >= el->bounds.x0 && cx <= el->bounds.x1 && cy >= el->bounds.y0 &&
            cy <= el->bounds.y1)
          return el;
      }
      return nullptr;
    }
    auto visible = visible_elements(state);
    if (number < 1 || static_cast<size_t>(number) > visible.size()) return nullptr;
    return visible[number - 1];
  };

  auto dispatch_press = [&](int number, const std::string& action) {
    if (state.current_app.empty()) {
      // Home screen: icons open apps.
      if (state.grid_mode) {
        note = "grid taps are not supported on the home screen";
        return;
      }
      if (number < 1 || static_cast<size_t>(number) > apps_.size()) {
        note = "stale element number " + std::to_string(number);
        return;
      }
      const AppDefinition& app = apps_[number - 1];
      next.current_app = app.app_name;
      next.nav_stack = {app.initial_screen};
      next.scroll_page = 0;
      next.ticks_on_screen = 0;
      next.focused_field.clear();
      return;
    }
    const UiElement* el = resolve_element(number);
    if (!el) {
      note = "stale element number " + std::to_string(number);
      return;
    }
    if (action == "tap" && el->kind == ElementKind::Switch && !el->state_var.empty()) {
      bool on = next.vars.contains(el->state_var) && var_truthy(next.vars[el->state_var]);
      next.vars[el->state_var] = !on;
    }
    if (action == "tap" && el->kind == ElementKind::TextField) next.focused_field = el->id;

    const ScreenDef* screen = current_screen(state);
    for (const auto& rule : screen->transitions) {
      if (rule.element != el->id || rule.action != action) continue;
      if (!rule.when.is_null() && !eval_predicate(rule.when, next)) continue;
      apply_set(next, rule.set);
      if (!rule.goto_screen.empty()) {
        if (rule.goto_screen == "BACK") {
          if (next.nav_stack.size() > 1)
            next.nav_stack.pop_back();
          else {
            next.current_app.clear();
            next.nav_stack.clear();
          }
        } else if (rule.goto_screen == "HOME") {
          next.current_app.clear();
          next.nav_stack.clear();
        } else {
          next.nav_stack.push_back(rule.goto_screen);
        }
        next.scroll_page = 0;
        next.ticks_on_screen = 0;
        next.focused_field.clear();
      }
      break;
    }
  };

  auto scroll_by = [&](int delta) {
    const ScreenDef* screen = current_screen(state);
    if (!screen) {
      note = "nothing to scroll";
      return;
    }
    int page = std::clamp(next.scroll_page + delta, 0, screen->scroll_extent - 1);
    if (page == next.scroll_page) note = "scroll already at the edge";
    next.scroll_page = page;
  };

  auto gesture_rule = [&](const std::string& gesture) -> bool {
    const ScreenDef* screen = current_screen(state);
    if (!screen) return false;
    for (const auto& rule : screen->transitions) {
      if (rule.gesture != gesture) continue;
      if (!rule.when.is_null() && !eval_predicate(rule.when, next)) continue;
      apply_set(next, rule.set);
      if (!rule.goto_screen.empty() && rule.goto_screen != "BACK" &&
          rule.goto_screen != "HOME") {
        next.nav_stack.push_back(rule.goto_screen);
        next.scroll_page = 0;
        next.ticks_on_screen = 0;
      }
      return true;
    }
    return false;
  };

  if (auto* t = std::get_if<Tap>(&cmd)) {
    dispatch_press(t->number, "tap");
  } else if (auto* l = std::get_if<LongPress>(&cmd)) {
    dispatch_press(l->number, "long_press");
  } else if (auto* s = std::get_if<Swipe>(&cmd)) {
    std::string g = "swipe_" + direction_name(s->direction);
    if (!gesture_rule(g)) {
      if (s->direction == Direction::Down)
        scroll_by(1);
      else if (s->direction == Direction::Up)
        scroll_by(-1);
      else
        note = "swipe direction has no effect here";
    }
  } else if (auto* g = std::get_if<SwipeGrid>(&cmd)) {
    if (!state.grid_mode) {
      note = "SwipeGrid outside grid mode";
    } else {
      int rows = state.grid_rows > 0 ? state.grid_rows : 1;
      int cols = state.grid_cols > 0 ? state.grid_cols : 1;
      int sr = (g->start_number - 1) / cols, er = (g->end_number - 1) / cols;
      (void)rows;
      if (er > sr)
        scroll_by(1);
      else if (er < sr)
        scroll_by(-1);
      else
        note = "horizontal grid swipe has no effect here";
    }
  } else if (auto* x = std::get_if<TextInput>(&cmd)) {
    const UiElement* field = nullptr;
    if (!state.current_app.empty()) {
      if (!state.focused_field.empty()) {
        const ScreenDef* screen = current_screen(state);
        for (const auto& el : screen->elements)
          if (el.id == state.focused_field) field = &el;
      } else {
        // A lone text field on screen receives input without an explicit tap.
        for (const UiElement* el : visible_elements(state)) {
          if (el->kind != ElementKind::TextField) continue;
          if (field) {
            field = nullptr;
            break;
          }
          field = el;
        }
      }
    }
    if (!field)
      note = "no focused text field";
    else if (field->state_var.empty())
      note = "focused field stores no state";
    else
      next.vars[field->state_var] = x->text;
  } else if (std::holds_alternative<BackCmd>(cmd)) {
    if (state.current_app.empty()) {
      note = "Back at the home screen";
    } else if (next.nav_stack.size() > 1) {
      next.nav_stack.pop_back();
      next.scroll_page = 0;
      next.ticks_on_screen = 0;
      next.focused_field.clear();
    } else {
      next.current_app.clear();
      next.nav_stack.clear();
      next.scroll_page = 0;
      next.focused_field.clear();
    }
  } else if (std::holds_alternative<FinishCmd>(cmd)) {
    next.finished = true;
  }

  EffectFlag flag = (next == state) ? EffectFlag::NoEffect : EffectFlag::Changed;
  // A fresh action always re-renders in elements mode; grid mode is
  // re-requested explicitly by the grounding loop when needed.
  auto [obs, next2] = observe_elements(next);
  // Re-rendering resets the numbering context; that alone is not "change".
  DeviceState cmp = next2;
  cmp.grid_mode = state.grid_mode;
  cmp.grid_rows = state.grid_rows;
  cmp.grid_cols = state.grid_cols;
  if (cmp == state) flag = EffectFlag::NoEffect;
  return {next2, obs, flag, note};
}

ElementDetail Device::crop_query(const DeviceState& state, int number) const {
  if (state.grid_mode) throw Error("crop_query requires an elements-mode observation");
  if (state.current_app.empty()) {
    if (number < 1 || static_cast<size_t>(number) > apps_.size())
      throw Error("crop_query: element number " + std::to_string(number) +
                  " out of range");
    return {apps_[number - 1].app_name, "button", "", home_icon_bounds(number - 1)};
  }
  auto visible = visible_elements(state);
  if (number < 1 || static_cast<size_t>(number) > visible.size())
    throw Error("crop_query: element number " + std::to_string(number) + " out of range");
  const UiElement* el = visible[number - 1];
  ElementDetail d;
  d.label = rendered_label(*el, state);
  d.kind = element_kind_name(el->kind);
  d.bounds = el->bounds;
  if (el->kind == ElementKind::Switch && !el->state_var.empty())
    d.state = var_truthy(state.vars[el->state_var]) ? "on" : "off";
  else if (el->kind == ElementKind::TextField && !el->state_var.empty() &&
           state.vars.contains(el->state_var) && state.vars[el->state_var].is_string())
    d.state = state.vars[el->state_var].get<std::string>();
  return d;
}

bool Device::check_success(const TaskSpec& task, const DeviceState& state,
                           const std::vector<std::string>& action_history) const {
  if (task.success.is_null()) return false;
  return eval_predicate(task.success, state, &action_history);
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

const TaskSpec* Suite::find_task(const std::string& id) const {
  for (const auto& t : tasks)
    if (t.task_id == id) return &t;
  return nullptr;
}

namespace {

void validate_task_predicate(const json& pred, const Device& device,
                             const std::string& task_id) {
  if (pred.is_null() || pred.is_boolean()) return;
  if (!pred.is_object())
    throw LoadError("task '" + task_id + "': predicate must be an object");
  for (const char* key : {"all", "any"}) {
    if (pred.contains(key))
      for (const auto& p : pred[key]) validate_task_predicate(p, device, task_id);
  }
  if (pred.contains("not")) validate_task_predicate(pred["not"], device, task_id);
  if (pred.contains("var")) {
    std::string name = pred["var"].get<std::string>();
    bool known = false;
    for (const auto& app : device.apps())
      if (app.state_vars.contains(name)) known = true;
    if (!known)
      throw LoadError("task '" + task_id + "': success predicate references unknown "
                      "state_var '" + name + "'");
  }
  if (pred.contains("screen")) {
    std::string id = pred["screen"].get<std::string>();
    bool known = false;
    for (const auto& app : device.apps())
      if (app.find_screen(id)) known = true;
    if (!known)
      throw LoadError("task '" + task_id + "': success predicate references unknown "
                      "screen '" + id + "'");
  }
}

}  // namespace

Suite load_suite_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open suite file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw LoadError("invalid JSON in " + path + ": " + e.what());
  }
  Suite suite;
  suite.name = doc.value("name", std::filesystem::path(path).stem().string());
  auto base = std::filesystem::path(path).parent_path();
  for (const auto& ap : doc.value("apps", json::array()))
    suite.apps.push_back(load_app_file((base / ap.get<std::string>()).string()));

  Device probe;
  for (const auto& app : suite.apps) probe.register_app(app);

  std::set<std::string> ids;
  for (const auto& jt : doc.value("tasks", json::array())) {
    TaskSpec task;
    task.task_id = jt.at("task_id").get<std::string>();
    if (!ids.insert(task.task_id).second)
      throw LoadError("duplicate task_id '" + task.task_id + "'");
    task.goal = jt.at("goal").get<std::string>();
    task.app_name = jt.at("app_name").get<std::string>();
    if (!probe.find_app(task.app_name))
      throw LoadError("task '" + task.task_id + "' names unknown app '" +
                      task.app_name + "'");
    if (jt.contains("initial")) {
      task.initial_vars = jt["initial"].value("vars", json());
      task.initial_screen = jt["initial"].value("screen", "");
    }
    task.success = jt.value("success", json());
    validate_task_predicate(task.success, probe, task.task_id);
    task.optimal_steps = jt.value("optimal_steps", 1);
    if (task.optimal_steps < 1)
      throw LoadError("task '" + task.task_id + "': optimal_steps must be >= 1");
    for (const auto& a : jt.value("optimal_actions", json::array()))
      task.optimal_actions.push_back(a.get<std::string>());
    suite.tasks.push_back(std::move(task));
  }
  return suite;
}

}  // namespace fpwc::sim

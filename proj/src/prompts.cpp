#include "fpwc/prompts.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#ifndef FPWC_TEMPLATE_DIR
#define FPWC_TEMPLATE_DIR "templates"
#endif

namespace fpwc::prompts {

using util::istarts_with;
using util::split_lines;
using util::trim;

const std::string& TemplateSet::text(Template t) const {
  switch (t) {
    case Template::InitGraph: return init_graph;
    case Template::InitPlan: return init_plan;
    case Template::Refine: return refine;
  }
  return init_graph;
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open template asset: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TemplateSet TemplateSet::load(const std::string& dir) {
  std::string d = dir;
  if (d.empty()) {
    if (const char* env = std::getenv("FPWC_TEMPLATES")) d = env;
  }
  if (d.empty()) d = FPWC_TEMPLATE_DIR;
  TemplateSet set;
  set.init_graph = read_file(d + "/initial_world_model.txt");
  set.init_plan = read_file(d + "/initial_plan.txt");
  set.refine = read_file(d + "/refinement.txt");
  return set;
}

const std::vector<std::string>& placeholder_names() {
  static const std::vector<std::string> names = {
      "<task_description>", "<App_name>",     "<Vertices>",       "<Edges>",
      "<plan>",             "<previous_vertex>", "<action>",      "<detailed_action>",
      "<thought>",          "<summary>",      "<act_history>",    "<repeated_doc>",
      "<app>"};
  return names;
}

std::vector<std::string> placeholder_residues(const std::string& rendered) {
  std::vector<std::string> found;
  for (const auto& name : placeholder_names())
    if (rendered.find(name) != std::string::npos) found.push_back(name);
  return found;
}

namespace {

void substitute_all(std::string& text, const std::string& placeholder,
                    const std::string& value) {
  size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
}

std::string require(const std::optional<std::string>& field, const char* placeholder) {
  if (!field) throw Error(std::string("render: missing required field for ") + placeholder);
  return *field;
}

}  // namespace

std::string render(Template t, const PromptContext& ctx, const TemplateSet& set) {
  std::string out = set.text(t);
  if (ctx.goal.empty()) throw Error("render: missing required field for <task_description>");
  substitute_all(out, "<task_description>", ctx.goal);

  switch (t) {
    case Template::InitGraph: {
      if (ctx.app_name.empty())
        throw Error("render: missing required field for <App_name>");
      substitute_all(out, "<App_name>", ctx.app_name);
      break;
    }
    case Template::InitPlan: {
      substitute_all(out, "<Vertices>", require(ctx.graph_vertices, "<Vertices>"));
      substitute_all(out, "<Edges>", require(ctx.graph_edges, "<Edges>"));
      break;
    }
    case Template::Refine: {
      if (ctx.app_name.empty()) throw Error("render: missing required field for <app>");
      substitute_all(out, "<app>", ctx.app_name);
      substitute_all(out, "<Vertices>", require(ctx.graph_vertices, "<Vertices>"));
      substitute_all(out, "<Edges>", require(ctx.graph_edges, "<Edges>"));
      substitute_all(out, "<plan>", require(ctx.plan_text, "<plan>"));
      substitute_all(out, "<previous_vertex>",
                     require(ctx.previous_vertex, "<previous_vertex>"));
      substitute_all(out, "<action>", require(ctx.action, "<action>"));
      substitute_all(out, "<detailed_action>",
                     require(ctx.detailed_action, "<detailed_action>"));
      substitute_all(out, "<thought>", ctx.thought.value_or(""));
      substitute_all(out, "<summary>", ctx.summary.value_or(""));
      substitute_all(out, "<act_history>", ctx.act_history.value_or(""));
      substitute_all(out, "<repeated_doc>", ctx.repeated_elements.value_or(""));
      break;
    }
  }
  return out;
}

std::string strip_code_fences(const std::string& text) {
  std::ostringstream os;
  bool first = true;
  for (const auto& line : split_lines(text)) {
    std::string t = trim(line);
    if (util::starts_with(t, "```")) continue;
    if (!first) os << "\n";
    os << line;
    first = false;
  }
  return os.str();
}

PlanResponse parse_plan_response(const std::string& raw) {
  std::string text = raw.size() > kMaxResponseBytes ? raw.substr(0, kMaxResponseBytes) : raw;
  text = strip_code_fences(text);
  auto lines = split_lines(text);

  PlanResponse out;
  bool have_vertex = false;
  size_t def_line = lines.size();
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string t = trim(lines[i]);
    if (!have_vertex && istarts_with(t, "current vertex")) {
      size_t colon = t.find(':');
      if (colon != std::string::npos) {
        out.current_vertex = trim(t.substr(colon + 1));
        have_vertex = true;
      }
    }
    if (def_line == lines.size() && util::starts_with(t, "def ") &&
        t.find("():") != std::string::npos) {
      def_line = i;
    }
  }
  if (!have_vertex) throw ParseError("plan response missing 'Current vertex:' line");
  if (def_line == lines.size())
    throw ParseError("plan response missing a 'def ...():' function");
  std::ostringstream os;
  for (size_t i = def_line; i < lines.size(); ++i) {
    if (i > def_line) os << "\n";
    os << lines[i];
  }
  out.plan_text = os.str();
  return out;
}

namespace {

// Section ids of the refinement response, in no particular order.
enum class Section {
  None,
  Observation,
  Thoughts,
  RemovedVertices,
  AddedVertices,
  RemovedEdges,
  AddedEdges,
  CurrentVertex,
  OtherApps,
  Successful,
  Ineffective,
  RevisedPlan,
  Remind,
  Impact,
};

struct HeaderSpec {
  const char* prefix;
  Section section;
};

// Longer prefixes first so "Removed vertices" never matches "Remind" etc.
const HeaderSpec kHeaders[] = {
    {"observation of the current", Section::Observation},
    {"observation", Section::Observation},
    {"thoughts", Section::Thoughts},
    {"removed vertices", Section::RemovedVertices},
    {"added vertices", Section::AddedVertices},
    {"removed edges", Section::RemovedEdges},
    {"added edges", Section::AddedEdges},
    {"current vertex", Section::CurrentVertex},
    {"added functions for other apps", Section::OtherApps},
    {"successful and expected action", Section::Successful},
    {"ineffective", Section::Ineffective},
    {"revised plan", Section::RevisedPlan},
    {"remind", Section::Remind},
    {"impact", Section::Impact},
};

// Matches "Header:" or "Header" at the start of a trimmed line; returns the
// text after the colon.
std::optional<std::pair<Section, std::string>> match_header(const std::string& line) {
  std::string t = trim(line);
  for (const auto& h : kHeaders) {
    if (!istarts_with(t, h.prefix)) continue;
    std::string rest = t.substr(std::string(h.prefix).size());
    // The next char must terminate the header, not extend a word.
    if (!rest.empty() && rest[0] != ':' && !util::is_space(rest[0])) continue;
    size_t colon = rest.find(':');
    std::string value = colon == std::string::npos ? "" : trim(rest.substr(colon + 1));
    if (colon == std::string::npos && !trim(rest).empty()) continue;
    return std::make_pair(h.section, value);
  }
  return std::nullopt;
}

std::optional<bool> parse_bool_token(const std::string& s) {
  std::string t = trim(s);
  while (!t.empty() && (t.back() == '.' || t.back() == '*')) t.pop_back();
  while (!t.empty() && (t.front() == '*')) t.erase(t.begin());
  t = trim(t);
  if (util::to_lower(t) == "true") return true;
  if (util::to_lower(t) == "false") return false;
  return std::nullopt;
}

}  // namespace

RefinementOutcome parse_refinement_response(const std::string& raw) {
  std::string text = raw.size() > kMaxResponseBytes ? raw.substr(0, kMaxResponseBytes) : raw;
  text = strip_code_fences(text);

  RefinementOutcome out;
  out.diff = wm::parse_diff(text);
  for (const auto& w : out.diff.warnings) out.warnings.push_back(w.message);

  Section current = Section::None;
  std::map<Section, std::string> blocks;
  std::optional<bool> successful, ineffective;
  bool saw_current_vertex = false;

  auto append = [&](Section s, const std::string& line) {
    std::string& block = blocks[s];
    if (!block.empty()) block += "\n";
    block += line;
  };

  for (const auto& line : split_lines(text)) {
    auto header = match_header(line);
    if (header) {
      current = header->first;
      switch (current) {
        case Section::CurrentVertex:
          out.current_vertex = util::strip_quotes(header->second);
          saw_current_vertex = true;
          break;
        case Section::Successful:
          successful = parse_bool_token(header->second);
          break;
        case Section::Ineffective:
          ineffective = parse_bool_token(header->second);
          break;
        default:
          if (!header->second.empty()) append(current, header->second);
          break;
      }
      continue;
    }
    if (current != Section::None) append(current, line);
  }

  if (!successful)
    throw ParseError("refinement response missing 'Successful and expected action'");
  if (!ineffective) throw ParseError("refinement response missing 'Ineffective'");
  out.successful_and_expected = *successful;
  out.ineffective = *ineffective;
  if (!saw_current_vertex)
    out.warnings.push_back("refinement response missing 'Current vertex'");

  out.observation_text = trim(blocks[Section::Observation]);
  out.thoughts = trim(blocks[Section::Thoughts]);
  out.remind = trim(blocks[Section::Remind]);
  out.impact = trim(blocks[Section::Impact]);

  std::string plan_block = blocks[Section::RevisedPlan];
  if (plan_block.find("def ") != std::string::npos) {
    // Drop leading prose before the function.
    size_t def_pos = plan_block.find("def ");
    out.revised_plan_text = plan_block.substr(def_pos);
  }

  for (const auto& line : split_lines(blocks[Section::OtherApps])) {
    std::string t = trim(line);
    size_t call = t.find("other_app_function");
    if (call == std::string::npos) continue;
    size_t open = t.find('(', call);
    size_t close = t.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close <= open) continue;
    std::string args = t.substr(open + 1, close - open - 1);
    size_t comma = args.find(',');
    if (comma == std::string::npos) continue;
    out.added_other_app_calls.emplace_back(
        util::strip_quotes(trim(args.substr(0, comma))),
        util::strip_quotes(trim(args.substr(comma + 1))));
  }
  return out;
}

}  // namespace fpwc::prompts

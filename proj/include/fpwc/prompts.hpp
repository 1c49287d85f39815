#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fpwc/world_model.hpp"

namespace fpwc::prompts {

enum class Template { InitGraph, InitPlan, Refine };

// Context for template rendering. Which fields are required depends on the
// template; render() reports the first missing one by placeholder name.
struct PromptContext {
  std::string goal;
  std::string app_name;
  std::optional<std::string> graph_vertices;
  std::optional<std::string> graph_edges;
  std::optional<std::string> plan_text;
  std::optional<std::string> previous_vertex;
  std::optional<std::string> action;
  std::optional<std::string> detailed_action;
  // Free-text context blocks; empty when absent.
  std::optional<std::string> thought;
  std::optional<std::string> summary;
  std::optional<std::string> act_history;
  std::optional<std::string> repeated_elements;
};

struct TemplateSet {
  std::string init_graph;
  std::string init_plan;
  std::string refine;

  const std::string& text(Template t) const;

  // Loads the three template assets from a directory. The directory defaults
  // to FPWC_TEMPLATE_DIR (compile-time) overridden by the FPWC_TEMPLATES
  // environment variable.
  static TemplateSet load(const std::string& dir = "");
};

std::string render(Template t, const PromptContext& ctx, const TemplateSet& set);

// Placeholder names a rendered prompt must no longer contain; used by tests
// and by render()'s own post-check.
const std::vector<std::string>& placeholder_names();
std::vector<std::string> placeholder_residues(const std::string& rendered);

struct PlanResponse {
  std::string current_vertex;
  std::string plan_text;  // starts at the "def ...():" line
};

PlanResponse parse_plan_response(const std::string& text);

struct RefinementOutcome {
  std::string observation_text;
  std::string thoughts;
  wm::GraphDiff diff;
  std::string current_vertex;
  std::vector<std::pair<std::string, std::string>> added_other_app_calls;
  bool successful_and_expected = false;
  bool ineffective = false;
  std::optional<std::string> revised_plan_text;
  std::string remind;
  std::string impact;
  std::vector<std::string> warnings;
};

RefinementOutcome parse_refinement_response(const std::string& text);

// Responses larger than this are truncated before parsing.
constexpr size_t kMaxResponseBytes = 64 * 1024;

// Drops Markdown code fence lines, keeping the fenced content.
std::string strip_code_fences(const std::string& text);

}  // namespace fpwc::prompts

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fpwc/plan_dsl.hpp"
#include "fpwc/prompts.hpp"
#include "test_paths.hpp"

using namespace fpwc;

namespace {

const prompts::TemplateSet& templates() {
  static prompts::TemplateSet set = prompts::TemplateSet::load();
  return set;
}

}  // namespace

TEST_CASE("graph prompt renders with no leftover placeholders") {
  prompts::PromptContext ctx;
  ctx.goal = "enable Wi-Fi";
  ctx.app_name = "Settings";
  std::string prompt = prompts::render(prompts::Template::InitGraph, ctx, templates());
  CHECK(prompt.find("enable Wi-Fi") != std::string::npos);
  CHECK(prompt.find("Settings") != std::string::npos);
  CHECK(prompts::placeholder_residues(prompt).empty());
}

TEST_CASE("plan prompt requires the graph sections") {
  prompts::PromptContext ctx;
  ctx.goal = "enable Wi-Fi";
  ctx.app_name = "Settings";
  CHECK_THROWS_WITH_AS(prompts::render(prompts::Template::InitPlan, ctx, templates()),
                       doctest::Contains("<Vertices>"), Error);
  ctx.graph_vertices = "Name: \"A\" Description: d. can-self-act: False";
  ctx.graph_edges = "Edge: E(\"A\", \"tap x\") -> \"A\"";
  std::string prompt = prompts::render(prompts::Template::InitPlan, ctx, templates());
  CHECK(prompts::placeholder_residues(prompt).empty());
}

TEST_CASE("refinement prompt fills optional context blocks with blanks") {
  prompts::PromptContext ctx;
  ctx.goal = "enable Wi-Fi";
  ctx.app_name = "Settings";
  ctx.graph_vertices = "v";
  ctx.graph_edges = "e";
  ctx.plan_text = "def new_plan():\n    return \"x\"";
  ctx.previous_vertex = "Homepage of the phone";
  ctx.action = "tap the Settings icon";
  ctx.detailed_action = "Tap(1)";
  std::string prompt = prompts::render(prompts::Template::Refine, ctx, templates());
  CHECK(prompts::placeholder_residues(prompt).empty());
  CHECK(prompt.find("Tap(1)") != std::string::npos);
}

TEST_CASE("plan responses split into vertex line and function text") {
  auto text = testutil::read_file(testutil::data_dir() + "/example_full_plan.txt");
  prompts::PlanResponse pr = prompts::parse_plan_response(text);
  CHECK(pr.current_vertex == "Homepage of the phone");
  CHECK(pr.plan_text.rfind("def new_plan():", 0) == 0);

  CHECK_THROWS_AS(prompts::parse_plan_response("no plan here at all"), ParseError);
}

TEST_CASE("plan responses tolerate code fences and mixed casing") {
  std::string resp =
      "CURRENT VERTEX: Main page\n```python\ndef new_plan():\n    return \"x\"\n```\n";
  prompts::PlanResponse pr = prompts::parse_plan_response(resp);
  CHECK(pr.current_vertex == "Main page");
  fpwc::plan::ParseResult r = fpwc::plan::parse_plan(pr.plan_text);
  CHECK(r.ok());
}

TEST_CASE("refinement responses parse into a structured outcome") {
  auto text = testutil::read_file(testutil::data_dir() + "/refinement_example.txt");
  prompts::RefinementOutcome out = prompts::parse_refinement_response(text);

  CHECK(out.successful_and_expected);
  CHECK_FALSE(out.ineffective);
  CHECK(out.current_vertex == "Homepage of the phone");
  CHECK(out.diff.removed_edges.size() == 1);
  CHECK(out.diff.added_edges.size() == 1);
  CHECK_FALSE(out.revised_plan_text.has_value());
  CHECK(out.remind.empty());
  CHECK(out.impact.find("homepage") != std::string::npos);
  CHECK(out.observation_text.find("homepage of the phone") != std::string::npos);
}

TEST_CASE("refinement parsing requires the two boolean verdicts") {
  CHECK_THROWS_AS(prompts::parse_refinement_response(
                      "Observation: x\nIneffective: False\n"),
                  ParseError);
  CHECK_THROWS_AS(prompts::parse_refinement_response(
                      "Successful and expected action: maybe\nIneffective: False\n"),
                  ParseError);
}

TEST_CASE("revised plans are extracted from the def line onward") {
  std::string resp =
      "Removed vertices:\n\nAdded vertices:\n\nRemoved edges:\n\nAdded edges:\n\n"
      "Successful and expected action: False\n"
      "Ineffective: True\n"
      "Revised plan:\n"
      "some preamble the model added\n"
      "def new_plan():\n"
      "    return \"revised\"\n"
      "Remind: pick a different element\n";
  prompts::RefinementOutcome out = prompts::parse_refinement_response(resp);
  CHECK_FALSE(out.successful_and_expected);
  CHECK(out.ineffective);
  REQUIRE(out.revised_plan_text.has_value());
  CHECK(out.revised_plan_text->rfind("def new_plan():", 0) == 0);
  CHECK(out.remind == "pick a different element");
  fpwc::plan::ParseResult r = fpwc::plan::parse_plan(*out.revised_plan_text);
  REQUIRE(r.ok());
}

TEST_CASE("other-app declarations are collected") {
  std::string resp =
      "Removed vertices:\n\nAdded vertices:\n\nRemoved edges:\n\nAdded edges:\n\n"
      "Added functions for other apps:\n"
      "other_app_function(\"Settings\", \"enable Wi-Fi\")\n\n"
      "Successful and expected action: True\n"
      "Ineffective: False\n";
  prompts::RefinementOutcome out = prompts::parse_refinement_response(resp);
  REQUIRE(out.added_other_app_calls.size() == 1);
  CHECK(out.added_other_app_calls[0].first == "Settings");
  CHECK(out.added_other_app_calls[0].second == "enable Wi-Fi");
}

TEST_CASE("oversized responses are truncated before parsing") {
  std::string resp =
      "Current vertex: Main page\ndef new_plan():\n    return \"x\"\n";
  resp += std::string(2 * prompts::kMaxResponseBytes, '#');
  prompts::PlanResponse pr = prompts::parse_plan_response(resp);
  CHECK(pr.current_vertex == "Main page");
}

TEST_CASE("strip_code_fences removes fence lines only") {
  std::string fenced = "```python\ncode line\n```\ntrailing\n";
  CHECK(prompts::strip_code_fences(fenced) == "code line\ntrailing\n");
}

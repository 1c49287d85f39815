#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

namespace fpwc::trace {

// ordered_json keeps key order stable so serialized traces are byte-comparable.
using ojson = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

struct ModelCallRecord {
  std::string kind;
  int64_t input_tokens = 0;
  int64_t output_tokens = 0;
  int64_t wall_ms = 0;
};

struct GroundingAttempt {
  std::string mode;  // "elements" | "grid"
  int candidate = 0;
  bool accepted = false;
};

// One record per interpreter effect the agent handled.
struct StepRecord {
  int step_index = 0;  // executed-action count t after this record
  std::string effect;
  std::vector<GroundingAttempt> grounding;
  std::string action;       // command string; empty when no device action ran
  std::string effect_flag;  // "changed" | "no_effect" | ""
  std::string obs_digest;
  std::vector<ModelCallRecord> model_calls;
  int depth = 0;  // sub-agent nesting, 0 for the parent
  bool success_now = false;
  std::string note;
};

struct EpisodeTrace {
  int schema_version = kSchemaVersion;
  std::string task_id;
  std::string backend_name;
  std::string app_name;
  std::string goal;
  int grid_rows = 9, grid_cols = 6;  // grid-mode geometry used by this run
  std::vector<StepRecord> steps;

  std::string status;  // success | failure | budget_exhausted | error
  std::string finish_reason;
  bool early_finish = false;  // agent declared done while success was false
  int executed_actions = 0;
  int64_t total_input_tokens = 0;
  int64_t total_output_tokens = 0;
  int64_t total_wall_ms = 0;
  int first_success_step = -1;  // t when the success predicate first held
  std::string final_graph_text;

  // Line-delimited serialization: header record, one record per step, footer.
  std::string to_jsonl() const;
  static EpisodeTrace from_jsonl(const std::string& text);
};

}  // namespace fpwc::trace

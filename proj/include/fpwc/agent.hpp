#pragma once

#include "fpwc/device_sim.hpp"
#include "fpwc/model_backend.hpp"
#include "fpwc/plan_dsl.hpp"
#include "fpwc/prompts.hpp"
#include "fpwc/trace.hpp"
#include "fpwc/world_model.hpp"

namespace fpwc::agent {

struct AgentConfig {
  int max_steps = 30;  // device-action budget shared with sub-agents
  int max_verify_attempts = 3;
  int grid_fallback_after = 3;  // repeated no-effect actions before grid mode
  int max_replan_retries = 2;
  int max_subagent_depth = 1;
  int grid_rows = 9;
  int grid_cols = 6;
  std::string store_dir;  // persists the refined graph when non-empty
};

enum class EpisodeStatus { Success, Failure, BudgetExhausted, Error };
std::string status_name(EpisodeStatus s);

struct EpisodeOutcome {
  EpisodeStatus status = EpisodeStatus::Error;
  std::string finish_reason;
  wm::WorldModelGraph final_graph;
};

struct EpisodeResult {
  EpisodeOutcome outcome;
  trace::EpisodeTrace trace;
  // Interpreter states discarded by plan swaps, retained so tests can assert
  // they are never stepped again.
  std::vector<plan::ExecState> discarded_states;
};

EpisodeResult run_episode(const sim::Device& device, const sim::TaskSpec& task,
                          backend::Backend& backend, const AgentConfig& config,
                          const prompts::TemplateSet& templates);

}  // namespace fpwc::agent

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fpwc/device_sim.hpp"
#include "fpwc/util.hpp"

namespace fpwc::backend {

using json = nlohmann::json;

enum class RequestKind { InitGraph, InitPlan, Refine, SelectAction, VerifyAction, QueryTrue };

std::string kind_name(RequestKind k);
std::optional<RequestKind> kind_from_name(const std::string& name);

struct ModelRequest {
  RequestKind kind = RequestKind::InitGraph;
  std::string prompt;  // non-empty
  // Attached for kinds that see the screen; InitGraph is text-only.
  std::optional<sim::Observation> observation;
  std::optional<sim::Observation> prev_observation;  // compare_screen queries
  std::string episode_id;
  int step_index = 0;
  // Structured side channel for the oracle (action phrase, excluded numbers,
  // crop detail, statement text). HTTP and scripted backends ignore it.
  std::map<std::string, std::string> aux;
};

struct ModelResponse {
  std::string text;
  int64_t input_tokens = 0;
  int64_t output_tokens = 0;
  int64_t wall_ms = 0;
};

// ceil(chars / 4); backends without server-reported usage fall back to this.
int64_t count_tokens(const std::string& text);

// Prompt plus serialized observation block(s), the text the model "sees".
std::string request_input_text(const ModelRequest& req);

class Backend {
public:
  virtual ~Backend() = default;
  virtual ModelResponse complete(const ModelRequest& req) = 0;
  virtual std::string name() const = 0;
  // State notifications let ground-truth backends track the simulator; remote
  // backends ignore them.
  virtual void observe_state(const sim::DeviceState&) {}
};

// ---------------------------------------------------------------------------
// Scripted playback
// ---------------------------------------------------------------------------

struct TapeEntry {
  RequestKind kind;
  std::string text;
};

class ScriptedBackend : public Backend {
public:
  explicit ScriptedBackend(std::vector<TapeEntry> tape) : tape_(std::move(tape)) {}
  static ScriptedBackend from_json(const json& doc);
  static ScriptedBackend from_file(const std::string& path);

  ModelResponse complete(const ModelRequest& req) override;
  std::string name() const override { return "scripted"; }

  size_t cursor() const { return cursor_; }
  bool exhausted() const { return cursor_ >= tape_.size(); }

private:
  std::vector<TapeEntry> tape_;
  size_t cursor_ = 0;
};

// Wraps another backend and records every exchange as a playback tape.
class RecordingBackend : public Backend {
public:
  explicit RecordingBackend(Backend& inner) : inner_(inner) {}
  ModelResponse complete(const ModelRequest& req) override;
  std::string name() const override { return inner_.name(); }
  void observe_state(const sim::DeviceState& s) override { inner_.observe_state(s); }

  json tape_json() const;

private:
  Backend& inner_;
  std::vector<TapeEntry> recorded_;
};

// ---------------------------------------------------------------------------
// HTTP chat-completion client
// ---------------------------------------------------------------------------

struct HttpConfig {
  std::string api_url;  // MODEL_API_URL
  std::string api_key;  // MODEL_API_KEY
  std::string model = "gpt-4-vision-preview";
  int max_retries = 3;          // timeouts and 5xx only, exponential backoff
  int timeout_seconds = 120;
  int backoff_base_ms = 250;
};

class HttpBackend : public Backend {
public:
  explicit HttpBackend(HttpConfig config);
  static HttpConfig config_from_env(const std::string& model);

  ModelResponse complete(const ModelRequest& req) override;
  std::string name() const override { return "http"; }

private:
  HttpConfig config_;
  std::string host_base_;  // scheme://host[:port]
  std::string path_;
};

// ---------------------------------------------------------------------------
// Simulator ground-truth oracle
// ---------------------------------------------------------------------------

// Per-task fixture document:
//   {
//     "init_graph": "<graph text>",
//     "init_plan": "<full plan response incl. Current vertex line>",
//     "truth": { "<normalized statement>": <predicate json> },
//     "refine": [ "<response text>", ... ]   // optional, consumed in order
//   }
class OracleBackend : public Backend {
public:
  OracleBackend(json fixture, const sim::Device& device);
  static OracleBackend from_file(const std::string& path, const sim::Device& device);

  ModelResponse complete(const ModelRequest& req) override;
  std::string name() const override { return "oracle"; }
  void observe_state(const sim::DeviceState& s) override { state_ = s; }

  // Token overlap between an action phrase and an element label; exposed for
  // tests of the grounding heuristic.
  static int token_overlap(const std::string& phrase, const std::string& label);

private:
  std::string answer(const ModelRequest& req);

  json fixture_;
  const sim::Device& device_;
  sim::DeviceState state_;
  size_t refine_cursor_ = 0;
};

std::string normalize_statement(const std::string& s);

}  // namespace fpwc::backend

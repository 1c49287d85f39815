#include "fpwc/model_backend.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"

namespace fpwc::backend {

using util::collapse_ws;
using util::to_lower;
using util::trim;

std::string kind_name(RequestKind k) {
  switch (k) {
    case RequestKind::InitGraph: return "InitGraph";
    case RequestKind::InitPlan: return "InitPlan";
    case RequestKind::Refine: return "Refine";
    case RequestKind::SelectAction: return "SelectAction";
    case RequestKind::VerifyAction: return "VerifyAction";
    case RequestKind::QueryTrue: return "QueryTrue";
  }
  return "InitGraph";
}

std::optional<RequestKind> kind_from_name(const std::string& name) {
  for (RequestKind k : {RequestKind::InitGraph, RequestKind::InitPlan, RequestKind::Refine,
                        RequestKind::SelectAction, RequestKind::VerifyAction,
                        RequestKind::QueryTrue}) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

int64_t count_tokens(const std::string& text) {
  return static_cast<int64_t>((text.size() + 3) / 4);
}

std::string request_input_text(const ModelRequest& req) {
  std::string text = req.prompt;
  if (req.observation) {
    text += "\n\nCurrent screen:\n" + req.observation->render_text();
  }
  if (req.prev_observation) {
    text += "\nPrevious screen:\n" + req.prev_observation->render_text();
  }
  return text;
}

// ---------------------------------------------------------------------------
// Scripted
// ---------------------------------------------------------------------------

ScriptedBackend ScriptedBackend::from_json(const json& doc) {
  if (!doc.is_array()) throw BackendError("tape must be a JSON array");
  std::vector<TapeEntry> tape;
  for (const auto& e : doc) {
    auto kind = kind_from_name(e.at("kind").get<std::string>());
    if (!kind)
      throw BackendError("tape entry has unknown kind '" +
                         e.at("kind").get<std::string>() + "'");
    tape.push_back({*kind, e.at("text").get<std::string>()});
  }
  return ScriptedBackend(std::move(tape));
}

ScriptedBackend ScriptedBackend::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BackendError("cannot open tape file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw BackendError("invalid JSON tape " + path + ": " + e.what());
  }
  return from_json(doc);
}

ModelResponse ScriptedBackend::complete(const ModelRequest& req) {
  if (req.prompt.empty()) throw BackendError("empty prompt");
  if (cursor_ >= tape_.size())
    throw BackendError("tape exhausted at entry " + std::to_string(cursor_) +
                       " (request kind " + kind_name(req.kind) + ")");
  const TapeEntry& entry = tape_[cursor_];
  if (entry.kind != req.kind)
    throw BackendError("tape mismatch at entry " + std::to_string(cursor_) +
                       ": expected " + kind_name(entry.kind) + ", got " +
                       kind_name(req.kind));
  ++cursor_;
  ModelResponse resp;
  resp.text = entry.text;
  resp.input_tokens = count_tokens(request_input_text(req));
  resp.output_tokens = count_tokens(resp.text);
  resp.wall_ms = 0;
  return resp;
}

ModelResponse RecordingBackend::complete(const ModelRequest& req) {
  ModelResponse resp = inner_.complete(req);
  recorded_.push_back({req.kind, resp.text});
  return resp;
}

json RecordingBackend::tape_json() const {
  json arr = json::array();
  for (const auto& e : recorded_)
    arr.push_back({{"kind", kind_name(e.kind)}, {"text", e.text}});
  return arr;
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

HttpConfig HttpBackend::config_from_env(const std::string& model) {
  HttpConfig cfg;
  if (const char* url = std::getenv("MODEL_API_URL")) cfg.api_url = url;
  if (const char* key = std::getenv("MODEL_API_KEY")) cfg.api_key = key;
  if (!model.empty()) cfg.model = model;
  return cfg;
}

HttpBackend::HttpBackend(HttpConfig config) : config_(std::move(config)) {
  if (config_.api_url.empty())
    throw BackendError("http backend requires MODEL_API_URL");
  // Split scheme://host[:port] from the path.
  std::string url = config_.api_url;
  size_t scheme_end = url.find("://");
  size_t path_start =
      url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) {
    host_base_ = url;
    path_ = "/v1/chat/completions";
  } else {
    host_base_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
    if (path_ == "/") path_ = "/v1/chat/completions";
  }
}

ModelResponse HttpBackend::complete(const ModelRequest& req) {
  if (req.prompt.empty()) throw BackendError("empty prompt");

  json content = json::array();
  content.push_back({{"type", "text"}, {"text", req.prompt}});
  if (req.observation)
    content.push_back({{"type", "text"},
                       {"text", "Current screen:\n" + req.observation->render_text()}});
  if (req.prev_observation)
    content.push_back(
        {{"type", "text"},
         {"text", "Previous screen:\n" + req.prev_observation->render_text()}});
  json body = {{"model", config_.model},
               {"temperature", 0},
               {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
  std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_base_ms << (attempt - 1)));
    }
    auto start = std::chrono::steady_clock::now();
    httplib::Client cli(host_base_);
    cli.set_connection_timeout(config_.timeout_seconds);
    cli.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    auto res = cli.Post(path_, headers, payload, "application/json");
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;  // timeout or connection failure, retryable
    }
    if (res->status >= 500) {
      last_error = "server error " + std::to_string(res->status);
      continue;
    }
    if (res->status >= 400)
      throw BackendError("http backend protocol error " + std::to_string(res->status) +
                         ": " + res->body);
    json doc;
    try {
      doc = json::parse(res->body);
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed completion response: ") + e.what());
    }
    ModelResponse out;
    try {
      out.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw BackendError("completion response missing choices[0].message.content");
    }
    if (doc.contains("usage") && doc["usage"].is_object()) {
      out.input_tokens = doc["usage"].value("prompt_tokens", int64_t(0));
      out.output_tokens = doc["usage"].value("completion_tokens", int64_t(0));
    }
    if (out.input_tokens == 0) out.input_tokens = count_tokens(request_input_text(req));
    if (out.output_tokens == 0) out.output_tokens = count_tokens(out.text);
    out.wall_ms = elapsed;
    return out;
  }
  throw BackendError("http backend gave up after " +
                     std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

std::string normalize_statement(const std::string& s) {
  return to_lower(collapse_ws(s));
}

namespace {

std::set<std::string> tokenize(const std::string& text) {
  std::set<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.insert(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(cur);
  // Grounding phrases are full of carrier words that match any label.
  static const std::set<std::string> stop = {"tap",  "the", "a",    "an",  "on",
                                             "to",   "of",  "long", "press", "swipe",
                                             "type", "in",  "into", "button", "element"};
  for (const auto& w : stop) out.erase(w);
  return out;
}

}  // namespace

int OracleBackend::token_overlap(const std::string& phrase, const std::string& label) {
  auto a = tokenize(phrase);
  auto b = tokenize(label);
  int n = 0;
  for (const auto& t : a)
    if (b.count(t)) ++n;
  return n;
}

OracleBackend::OracleBackend(json fixture, const sim::Device& device)
    : fixture_(std::move(fixture)), device_(device) {
  if (!fixture_.is_object()) throw BackendError("oracle fixture must be a JSON object");
}

OracleBackend OracleBackend::from_file(const std::string& path, const sim::Device& device) {
  std::ifstream in(path);
  if (!in) throw BackendError("cannot open oracle fixture: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw BackendError("invalid JSON fixture " + path + ": " + e.what());
  }
  return OracleBackend(std::move(doc), device);
}

ModelResponse OracleBackend::complete(const ModelRequest& req) {
  if (req.prompt.empty()) throw BackendError("empty prompt");
  ModelResponse resp;
  resp.text = answer(req);
  resp.input_tokens = count_tokens(request_input_text(req));
  resp.output_tokens = count_tokens(resp.text);
  resp.wall_ms = 0;
  return resp;
}

std::string OracleBackend::answer(const ModelRequest& req) {
  auto aux = [&](const std::string& key) -> std::string {
    auto it = req.aux.find(key);
    return it == req.aux.end() ? std::string() : it->second;
  };

  // Sub-agent requests resolve against a nested fixture keyed by their goal.
  const json* doc = &fixture_;
  if (fixture_.contains("subagents")) {
    std::string goal = normalize_statement(aux("goal"));
    for (auto it = fixture_["subagents"].begin(); it != fixture_["subagents"].end();
         ++it) {
      if (normalize_statement(it.key()) == goal) {
        doc = &it.value();
        break;
      }
    }
  }

  switch (req.kind) {
    case RequestKind::InitGraph: {
      if (!doc->contains("init_graph"))
        throw BackendError("oracle missing fixture: init_graph");
      return (*doc)["init_graph"].get<std::string>();
    }
    case RequestKind::InitPlan: {
      if (!doc->contains("init_plan"))
        throw BackendError("oracle missing fixture: init_plan");
      return (*doc)["init_plan"].get<std::string>();
    }
    case RequestKind::Refine: {
      const json& scripted = fixture_.value("refine", json::array());
      if (refine_cursor_ < scripted.size())
        return scripted[refine_cursor_++].get<std::string>();
      // Default: report what the simulator observed, change nothing.
      bool changed = aux("effect_flag") != "no_effect";
      std::ostringstream os;
      os << "Observation of the current UI screenshot:\n\n"
         << "Thoughts:\n\n"
         << "Removed vertices:\n\nAdded vertices:\n\nRemoved edges:\n\nAdded edges:\n\n"
         << "Current vertex: " << aux("current_vertex") << "\n"
         << "Added functions for other apps:\n\n"
         << "Successful and expected action: " << (changed ? "True" : "False") << "\n"
         << "Ineffective: " << (changed ? "False" : "True") << "\n"
         << "Revised plan:\n\nRemind:\n\n"
         << "Impact on the subsequent plan:\n";
      return os.str();
    }
    case RequestKind::QueryTrue: {
      std::string statement = normalize_statement(aux("statement"));
      for (const json* source : std::initializer_list<const json*>{doc, &fixture_}) {
        const json& truth = source->value("truth", json::object());
        if (truth.contains(statement))
          return device_.eval_predicate(truth[statement], state_) ? "True" : "False";
      }
      if (aux("compare_screen") == "true") {
        // "Same screen as before" convention when no explicit mapping exists.
        if (req.observation && req.prev_observation)
          return req.observation->digest() == req.prev_observation->digest() ? "True"
                                                                             : "False";
      }
      throw BackendError("oracle gap: no truth mapping for statement '" +
                         aux("statement") + "'");
    }
    case RequestKind::SelectAction: {
      if (!req.observation) throw BackendError("SelectAction requires an observation");
      std::string phrase = aux("action");
      std::set<int> excluded;
      {
        std::stringstream ss(aux("excluded"));
        std::string part;
        while (std::getline(ss, part, ',')) {
          std::string p = trim(part);
          if (!p.empty()) excluded.insert(std::stoi(p));
        }
      }
      int best_number = 0, best_score = 0;
      for (const auto& entry : req.observation->entries) {
        if (excluded.count(entry.number)) continue;
        int score = token_overlap(phrase, entry.label);
        if (score > best_score) {
          best_score = score;
          best_number = entry.number;
        }
      }
      if (req.observation->mode == "grid" && best_number == 0 && !phrase.empty()) {
        // Grid cells carry no labels; fall back to the ground-truth element
        // position so the fallback path stays exercisable end to end.
        for (const sim::UiElement* el : device_.visible_elements(state_)) {
          if (token_overlap(phrase, device_.rendered_label(*el, state_)) == 0) continue;
          for (const auto& entry : req.observation->entries) {
            double cx = (entry.bounds.x0 + entry.bounds.x1) / 2;
            double cy = (entry.bounds.y0 + entry.bounds.y1) / 2;
            if (cx >= el->bounds.x0 && cx <= el->bounds.x1 && cy >= el->bounds.y0 &&
                cy <= el->bounds.y1 && !excluded.count(entry.number)) {
              best_number = entry.number;
              break;
            }
          }
          if (best_number) break;
        }
      }
      return best_number == 0 ? "None" : std::to_string(best_number);
    }
    case RequestKind::VerifyAction: {
      std::string phrase = aux("action");
      std::string label = aux("crop_label");
      if (aux("mode") == "grid") return "True";  // grid cells carry no labels
      return token_overlap(phrase, label) > 0 ? "True" : "False";
    }
  }
  throw BackendError("unhandled request kind");
}

}  // namespace fpwc::backend

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "httplib.h"

#include "fpwc/model_backend.hpp"
#include "test_paths.hpp"

using namespace fpwc;
using backend::ModelRequest;
using backend::RequestKind;

namespace {

sim::Device bundled_device(const sim::Suite& suite) {
  sim::Device d;
  for (const auto& app : suite.apps) d.register_app(app);
  return d;
}

ModelRequest req_of(RequestKind kind, std::string prompt = "p") {
  ModelRequest r;
  r.kind = kind;
  r.prompt = std::move(prompt);
  return r;
}

}  // namespace

TEST_CASE("token counting rounds characters up to 4-char units") {
  CHECK(backend::count_tokens("") == 0);
  CHECK(backend::count_tokens("a") == 1);
  CHECK(backend::count_tokens("abcd") == 1);
  CHECK(backend::count_tokens("abcde") == 2);
  CHECK(backend::count_tokens(std::string(4001, 'x')) == 1001);
}

TEST_CASE("request kind names round trip") {
  for (RequestKind k : {RequestKind::InitGraph, RequestKind::InitPlan, RequestKind::Refine,
                        RequestKind::SelectAction, RequestKind::VerifyAction,
                        RequestKind::QueryTrue}) {
    auto back = backend::kind_from_name(backend::kind_name(k));
    REQUIRE(back.has_value());
    CHECK(*back == k);
  }
  CHECK_FALSE(backend::kind_from_name("Telepathy").has_value());
}

TEST_CASE("scripted playback enforces order and length") {
  backend::ScriptedBackend sb({{RequestKind::InitGraph, "g"},
                               {RequestKind::InitPlan, "p"}});
  auto r1 = sb.complete(req_of(RequestKind::InitGraph));
  CHECK(r1.text == "g");
  CHECK(r1.wall_ms == 0);
  CHECK(r1.output_tokens == backend::count_tokens("g"));
  CHECK_FALSE(sb.exhausted());

  CHECK_THROWS_WITH_AS(sb.complete(req_of(RequestKind::QueryTrue)),
                       doctest::Contains("tape mismatch at entry 1"), BackendError);
  sb.complete(req_of(RequestKind::InitPlan));
  CHECK(sb.exhausted());
  CHECK_THROWS_WITH_AS(sb.complete(req_of(RequestKind::InitPlan)),
                       doctest::Contains("tape exhausted at entry 2"), BackendError);
}

TEST_CASE("recorded tapes replay through a scripted backend") {
  backend::ScriptedBackend inner({{RequestKind::InitGraph, "g"},
                                  {RequestKind::QueryTrue, "True"}});
  backend::RecordingBackend rec(inner);
  rec.complete(req_of(RequestKind::InitGraph));
  rec.complete(req_of(RequestKind::QueryTrue));

  backend::json tape = rec.tape_json();
  REQUIRE(tape.is_array());
  REQUIRE(tape.size() == 2);
  CHECK(tape[0]["kind"] == "InitGraph");

  backend::ScriptedBackend replayed = backend::ScriptedBackend::from_json(tape);
  CHECK(replayed.complete(req_of(RequestKind::InitGraph)).text == "g");
  CHECK(replayed.complete(req_of(RequestKind::QueryTrue)).text == "True");
}

TEST_CASE("tape files reject structural problems") {
  CHECK_THROWS_AS(backend::ScriptedBackend::from_json(backend::json::object()),
                  BackendError);
  CHECK_THROWS_AS(backend::ScriptedBackend::from_json(backend::json::parse(
                      R"([{"kind": "Nope", "text": "x"}])")),
                  BackendError);
  CHECK_THROWS_AS(backend::ScriptedBackend::from_file("/no/such/tape.json"),
                  BackendError);
}

TEST_CASE("statement normalization and grounding overlap") {
  CHECK(backend::normalize_statement("  The   WLAN Switch IS on ") ==
        "the wlan switch is on");

  using backend::OracleBackend;
  // Carrier words never count toward a match.
  CHECK(OracleBackend::token_overlap("tap the WLAN switch", "Battery") == 0);
  CHECK(OracleBackend::token_overlap("tap the WLAN switch", "WLAN: off") == 1);
  CHECK(OracleBackend::token_overlap("tap 'Network & internet' button",
                                     "Network & internet") == 2);
  CHECK(OracleBackend::token_overlap("type the device name", "Device name") == 2);
}

TEST_CASE("the ground-truth backend answers from fixtures and simulator state") {
  sim::Suite suite =
      sim::load_suite_file(testutil::fixture_dir() + "/suites/bundled_suite.json");
  sim::Device device = bundled_device(suite);
  backend::OracleBackend oracle = backend::OracleBackend::from_file(
      testutil::fixture_dir() + "/suites/oracle/enable_wifi.json", device);

  auto [state, obs] = device.reset(*suite.find_task("enable_wifi"));
  oracle.observe_state(state);

  SUBCASE("truth-table queries evaluate the mapped predicate") {
    ModelRequest q = req_of(RequestKind::QueryTrue);
    q.aux["statement"] = "The WLAN switch is ON";
    CHECK(oracle.complete(q).text == "False");
    state.vars["wifi_enabled"] = true;
    oracle.observe_state(state);
    CHECK(oracle.complete(q).text == "True");
  }

  SUBCASE("unmapped statements are a hard error, not a guess") {
    ModelRequest q = req_of(RequestKind::QueryTrue);
    q.aux["statement"] = "the moon is full";
    CHECK_THROWS_WITH_AS(oracle.complete(q), doctest::Contains("oracle gap"),
                         BackendError);
  }

  SUBCASE("selection picks the best-overlap element and honors exclusions") {
    ModelRequest s = req_of(RequestKind::SelectAction);
    s.observation = obs;  // home screen: Settings, Contacts, Notes
    s.aux["action"] = "tap the Settings app";
    CHECK(oracle.complete(s).text == "1");
    s.aux["excluded"] = "1";
    CHECK(oracle.complete(s).text == "None");
  }

  SUBCASE("verification compares the crop label against the phrase") {
    ModelRequest v = req_of(RequestKind::VerifyAction);
    v.aux["action"] = "tap the Settings app";
    v.aux["crop_label"] = "Settings";
    CHECK(oracle.complete(v).text == "True");
    v.aux["crop_label"] = "Notes";
    CHECK(oracle.complete(v).text == "False");
    v.aux["mode"] = "grid";
    CHECK(oracle.complete(v).text == "True");
  }

  SUBCASE("fixture sections are required") {
    backend::OracleBackend empty(backend::json::object(), device);
    CHECK_THROWS_WITH_AS(empty.complete(req_of(RequestKind::InitGraph)),
                         doctest::Contains("init_graph"), BackendError);
  }
}

TEST_CASE("http configuration comes from the environment") {
  // The sandbox test runner does not export MODEL_API_URL.
  if (std::getenv("MODEL_API_URL") == nullptr) {
    backend::HttpConfig cfg = backend::HttpBackend::config_from_env("m");
    CHECK(cfg.api_url.empty());
    CHECK(cfg.model == "m");
    CHECK_THROWS_WITH_AS(backend::HttpBackend{cfg},
                         doctest::Contains("MODEL_API_URL"), BackendError);
  }
}

TEST_CASE("http client parses completions from a local server") {
  httplib::Server server;
  std::string last_body;
  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                last_body = req.body;
                backend::json out = {
                    {"choices",
                     {{{"message", {{"role", "assistant"}, {"content", "42"}}}}}},
                    {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 2}}}};
                res.set_content(out.dump(), "application/json");
              });
  server.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content("nope", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  backend::HttpConfig cfg;
  cfg.api_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.max_retries = 0;
  backend::HttpBackend http(cfg);

  ModelRequest r = req_of(RequestKind::QueryTrue, "is it on?");
  backend::ModelResponse resp = http.complete(r);
  CHECK(resp.text == "42");
  CHECK(resp.input_tokens == 7);
  CHECK(resp.output_tokens == 2);
  backend::json sent = backend::json::parse(last_body);
  CHECK(sent["temperature"] == 0);
  CHECK(sent["messages"][0]["content"][0]["text"] == "is it on?");

  // 4xx responses fail immediately, without retries.
  backend::HttpConfig bad = cfg;
  bad.api_url = "http://127.0.0.1:" + std::to_string(port) + "/bad";
  backend::HttpBackend http_bad(bad);
  CHECK_THROWS_WITH_AS(http_bad.complete(r), doctest::Contains("protocol error 400"),
                       BackendError);

  server.stop();
  worker.join();
}

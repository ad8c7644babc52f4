// Copyright 2026 The perprompt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "perprompt/errors.hpp"
#include "perprompt/llmclient.hpp"
#include "test_support.hpp"

using namespace perprompt;
using nlohmann::json;
using namespace perprompt::testing;

namespace {

CompletionRequest request(std::string user, std::size_t n = 1, RoleTag role = RoleTag::kEvaluator) {
  CompletionRequest req{MessageList("system text", {std::move(user)})};
  req.n = n;
  req.role_tag = role;
  return req;
}

class CountingBackend : public ChatBackend {
 public:
  std::vector<std::string> complete(const CompletionRequest& req) override {
    const std::size_t now = ++in_flight;
    std::size_t seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --in_flight;
    ++calls;
    return std::vector<std::string>(req.n, "ok " + std::to_string(req.sample_seed));
  }
  std::string_view model() const override { return "counting"; }

  std::atomic<std::size_t> in_flight{0};
  std::atomic<std::size_t> peak{0};
  std::atomic<std::size_t> calls{0};
};

struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  LocalServer() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"; }
};

BackendConfig http_config(const std::string& url) {
  BackendConfig cfg;
  cfg.endpoint = url;
  cfg.model = "m";
  cfg.timeout = std::chrono::milliseconds(2000);
  cfg.retry.max_attempts = 3;
  cfg.retry.backoff = std::chrono::milliseconds(1);
  return cfg;
}

std::string choices_body(std::size_t n, const std::string& prefix) {
  json choices = json::array();
  // Reverse order on the wire; the client restores index order.
  for (std::size_t i = n; i-- > 0;) {
    choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", prefix + std::to_string(i)}}}});
  }
  return json{{"choices", choices}}.dump();
}

}  // namespace

TEST_CASE("request validation") {
  auto req = request("x");
  req.n = 0;
  CHECK_THROWS_AS(req.validate(), ArgumentError);
  req = request("x");
  req.temperature = -1;
  CHECK_THROWS_AS(req.validate(), ArgumentError);
}

TEST_CASE("chat body and response parsing") {
  auto req = request("hello", 3);
  req.temperature = 0.5;
  const auto body = chat_request_body(req, "m");
  CHECK(body["model"] == "m");
  CHECK(body["n"] == 3);
  CHECK(body["temperature"] == 0.5);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][1] == json{{"role", "user"}, {"content", "hello"}});
  CHECK(!body.contains("sample_seed"));

  CHECK(parse_chat_response(choices_body(3, "c")) == std::vector<std::string>{"c0", "c1", "c2"});
  CHECK_THROWS_AS(parse_chat_response("nope"), ProtocolError);
  CHECK_THROWS_AS(parse_chat_response(R"({"choices": 3})"), ProtocolError);
  CHECK_THROWS_AS(parse_chat_response(R"({"choices": [{"message": {"content": 4}}]})"), ProtocolError);
}

TEST_CASE("scripted rules") {
  TempDir dir("llm");
  const auto rules = dir.path() / "rules.jsonl";
  write_file(rules,
             "{\"role\": \"judge\", \"completions\": [\"0\"]}\n"
             "\n"
             "{\"contains\": \"apples\", \"completions\": [\"a\", \"b\"]}\n"
             "{\"role\": \"generator\", \"completions\": [\"g\"]}\n");
  auto backend = ScriptedBackend::from_rules_file(rules);
  CHECK(complete(request("apples please", 3), *backend) == std::vector<std::string>{"a", "b", "a"});
  CHECK(complete(request("apples", 1, RoleTag::kJudge), *backend) == std::vector<std::string>{"0"});
  CHECK(complete(request("pears", 2, RoleTag::kGenerator), *backend) == std::vector<std::string>{"g", "g"});
  CHECK_THROWS_AS(complete(request("pears"), *backend), BackendError);
  CHECK(backend->calls() == 4);

  write_file(rules, "{\"role\": \"boss\", \"completions\": [\"x\"]}\n");
  CHECK_THROWS_AS(ScriptedBackend::from_rules_file(rules), ParseError);
  write_file(rules, "{\"completions\": []}\n");
  CHECK_THROWS_AS(ScriptedBackend::from_rules_file(rules), ParseError);
  CHECK_THROWS_AS(ScriptedBackend::from_rules_file(dir.path() / "missing"), ConfigError);
}

TEST_CASE("complete enforces arity") {
  ScriptedBackend short_backend("s", [](const CompletionRequest&) { return std::vector<std::string>{"one"}; });
  CHECK_THROWS_AS(complete(request("x", 2), short_backend), ProtocolError);
  CHECK(complete(request("x", 1), short_backend).size() == 1);
}

TEST_CASE("cache hit makes no backend call") {
  TempDir dir("llm");
  ResponseCache cache(dir.path());
  CountingBackend backend;
  auto req = request("cached", 2);
  req.sample_seed = 9;
  const auto first = cached_complete(req, backend, cache);
  const auto second = cached_complete(req, backend, cache);
  CHECK(first == second);
  CHECK(backend.calls == 1);

  auto warmer = req;
  warmer.temperature = 0.7;
  CHECK(cache_key(warmer, "counting") != cache_key(req, "counting"));
  auto reseeded = req;
  reseeded.sample_seed = 10;
  CHECK(cache_key(reseeded, "counting") != cache_key(req, "counting"));
  CHECK(cache_key(req, "other") != cache_key(req, "counting"));
  cached_complete(warmer, backend, cache);
  CHECK(backend.calls == 2);
}

TEST_CASE("corrupt cache entries are quarantined and refetched") {
  TempDir dir("llm");
  ResponseCache cache(dir.path());
  CountingBackend backend;
  const auto req = request("fragile");
  const auto key = cache_key(req, backend.model());
  cached_complete(req, backend, cache);
  const auto path = cache.entry_path(key);

  SUBCASE("truncated") {
    const auto text = read_file(path);
    write_file(path, text.substr(0, text.size() / 2));
  }
  SUBCASE("checksum mismatch") {
    auto j = json::parse(read_file(path));
    j["completions"][0] = "tampered";
    write_file(path, j.dump());
  }
  SUBCASE("key mismatch") {
    auto j = json::parse(read_file(path));
    j["key"] = "00";
    write_file(path, j.dump());
  }
  CHECK(!cache.lookup(key));
  CHECK(cache.quarantined() == 1);
  CHECK(std::filesystem::exists(path.string() + ".corrupt-0"));
  CHECK(!std::filesystem::exists(path));
  cached_complete(req, backend, cache);
  CHECK(backend.calls == 2);
  CHECK(cache.lookup(key));
}

TEST_CASE("cache round-trips arbitrary unicode") {
  TempDir dir("llm");
  ResponseCache cache(dir.path());
  Rng rng(12);
  const std::vector<std::string> pieces = {"a", "\n", "\"", "\\", "é", "ß", "中文", "🙂", "\t", "{}", " ", "\xc3\xbf"};
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> completions(1 + rng.uniform_index(4));
    for (auto& s : completions) {
      const std::size_t len = rng.uniform_index(30);
      for (std::size_t k = 0; k < len; ++k) s += pieces[rng.uniform_index(pieces.size())];
    }
    const std::string key = sha256_hex(std::to_string(i));
    cache.store(key, json{{"i", i}}, completions);
    const auto back = cache.lookup(key);
    REQUIRE(back);
    CHECK(*back == completions);
  }
  CHECK(cache.quarantined() == 0);
}

TEST_CASE("sha256 known answer") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("bounded backend caps in-flight calls") {
  auto inner = std::make_shared<CountingBackend>();
  BoundedBackend bounded(inner, 3);
  std::vector<std::thread> threads;
  for (int t = 0; t < 12; ++t) {
    threads.emplace_back([&bounded] { complete(request("x"), bounded); });
  }
  for (auto& t : threads) t.join();
  CHECK(inner->calls == 12);
  CHECK(inner->peak <= 3);
  CHECK(inner->peak >= 2);
}

TEST_CASE("unreachable endpoint exhausts retries") {
  // Bind then release a port so nothing is listening on it.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpChatBackend backend(http_config("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"));
  try {
    backend.complete(request("x"));
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.attempts() == 3);
    CHECK(e.status() == 0);
  }
}

TEST_CASE("http backend against a local server") {
  LocalServer srv;
  std::atomic<int> hits{0};
  std::atomic<int> failures_left{0};
  json last_body;
  std::mutex body_mu;
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const auto body = json::parse(req.body);
    {
      std::lock_guard lock(body_mu);
      last_body = body;
    }
    const std::string user = body["messages"][1]["content"];
    if (user == "teapot") {
      res.status = 418;
      return;
    }
    if (user == "flaky" && failures_left > 0) {
      --failures_left;
      res.status = 503;
      return;
    }
    if (user == "garbage") {
      res.set_content("not json", "text/plain");
      return;
    }
    // Serve at most two choices per call so the client has to come back.
    const std::size_t n = std::min<std::size_t>(body["n"].get<std::size_t>(), 2);
    res.set_content(choices_body(n, "r" + std::to_string(hits.load()) + "-"), "application/json");
  });
  srv.start();
  HttpChatBackend backend(http_config(srv.url()));

  SUBCASE("fewer choices are topped up") {
    const auto out = complete(request("hi", 5), backend);
    CHECK(out == std::vector<std::string>{"r1-0", "r1-1", "r2-0", "r2-1", "r3-0"});
    CHECK(hits == 3);
    std::lock_guard lock(body_mu);
    CHECK(last_body["n"] == 1);
    CHECK(last_body["model"] == "m");
  }
  SUBCASE("5xx is retried") {
    failures_left = 2;
    CHECK(complete(request("flaky"), backend).size() == 1);
    CHECK(hits == 3);
  }
  SUBCASE("5xx beyond the budget fails") {
    failures_left = 5;
    try {
      complete(request("flaky"), backend);
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(e.status() == 503);
      CHECK(e.attempts() == 3);
    }
  }
  SUBCASE("4xx fails immediately") {
    try {
      complete(request("teapot"), backend);
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(e.status() == 418);
      CHECK(e.attempts() == 1);
    }
    CHECK(hits == 1);
  }
  SUBCASE("malformed body is a protocol error") {
    CHECK_THROWS_AS(complete(request("garbage"), backend), ProtocolError);
  }
}

TEST_CASE("auth header comes from the environment") {
  LocalServer srv;
  std::string seen;
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = req.get_header_value("Authorization");
    res.set_content(choices_body(1, "x"), "application/json");
  });
  srv.start();
  auto cfg = http_config(srv.url());
  cfg.auth_env = "PERPROMPT_TEST_TOKEN";
  ::setenv("PERPROMPT_TEST_TOKEN", "s3cret", 1);
  HttpChatBackend backend(cfg);
  complete(request("x"), backend);
  CHECK(seen == "Bearer s3cret");
  ::unsetenv("PERPROMPT_TEST_TOKEN");
  CHECK_THROWS_AS(complete(request("x"), backend), ConfigError);
}

TEST_CASE("backend config validation") {
  auto cfg = http_config("ftp://x");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = http_config("http://x/y");
  cfg.model.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

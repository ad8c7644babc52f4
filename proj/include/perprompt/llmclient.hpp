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

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "perprompt/corpus.hpp"

namespace perprompt {

enum class RoleTag { kGenerator, kEvaluator, kJudge };
std::string_view to_string(RoleTag role);

struct CompletionRequest {
  MessageList messages;
  double temperature = 1.0;
  std::size_t n = 1;
  std::size_t max_tokens = 1024;
  RoleTag role_tag = RoleTag::kEvaluator;
  // Client-side salt: part of the cache key, never sent to the server.
  std::uint64_t sample_seed = 0;

  void validate() const;
};

struct RetryPolicy {
  std::size_t max_attempts = 3;
  std::chrono::milliseconds backoff{500};
  double backoff_multiplier = 2.0;
};

struct BackendConfig {
  std::string endpoint;  // full URL of the chat-completions route
  std::string model;
  std::string auth_env;  // env var holding the bearer token; empty = none
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  std::size_t parallelism = 4;

  void validate() const;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Exactly req.n completions, in sample order.
  virtual std::vector<std::string> complete(const CompletionRequest& req) = 0;
  virtual std::string_view model() const = 0;
};

// {model, messages:[{role, content}], temperature, n, max_tokens}
nlohmann::json chat_request_body(const CompletionRequest& req, std::string_view model);
// choices[].message.content ordered by choices[].index. ProtocolError on
// any shape mismatch.
std::vector<std::string> parse_chat_response(std::string_view body);

// OpenAI-style chat completions over HTTP(S). Retries transport failures,
// 429 and 5xx with exponential backoff; other statuses fail immediately.
// Servers returning fewer than n choices are asked again for the rest.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(BackendConfig config);
  std::vector<std::string> complete(const CompletionRequest& req) override;
  std::string_view model() const override { return config_.model; }

 private:
  std::vector<std::string> request_once(const CompletionRequest& req, std::size_t n);

  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

// Deterministic backend for tests and offline runs.
class ScriptedBackend : public ChatBackend {
 public:
  using Responder = std::function<std::vector<std::string>(const CompletionRequest&)>;

  ScriptedBackend(std::string model, Responder responder);

  // Rules file, one JSON object per line, first match wins:
  //   {"contains": "...", "role": "generator|evaluator|judge",
  //    "completions": ["...", ...]}
  // `contains` is matched against the flattened messages; both keys are
  // optional. Completions are cycled to fill n.
  static std::unique_ptr<ScriptedBackend> from_rules_file(const std::filesystem::path& path,
                                                          std::string model = "scripted");

  std::vector<std::string> complete(const CompletionRequest& req) override;
  std::string_view model() const override { return model_; }
  std::size_t calls() const { return calls_.load(); }

 private:
  std::string model_;
  Responder responder_;
  std::atomic<std::size_t> calls_{0};
};

// Caps the number of in-flight requests to an inner backend.
class BoundedBackend : public ChatBackend {
 public:
  BoundedBackend(std::shared_ptr<ChatBackend> inner, std::size_t max_in_flight);
  std::vector<std::string> complete(const CompletionRequest& req) override;
  std::string_view model() const override { return inner_->model(); }

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::size_t max_in_flight_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t in_flight_ = 0;
};

// Validates the request, calls the backend and enforces the arity contract.
std::vector<std::string> complete(const CompletionRequest& req, ChatBackend& backend);

std::string sha256_hex(std::string_view bytes);

// Canonical key material: model, messages, temperature, n, max_tokens and
// sample_seed.
nlohmann::json cache_key_material(const CompletionRequest& req, std::string_view model);
std::string cache_key(const CompletionRequest& req, std::string_view model);

// On-disk memo of completions: <dir>/<2-hex prefix>/<key>.json holding the
// key material digest, completions, a checksum and a timestamp. Writes go
// to a temp file and are renamed into place. Unreadable or inconsistent
// entries are moved aside as <key>.json.corrupt-<n> and treated as misses.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<std::vector<std::string>> lookup(const std::string& key);
  void store(const std::string& key, const nlohmann::json& material,
             const std::vector<std::string>& completions);
  std::filesystem::path entry_path(const std::string& key) const;
  const std::filesystem::path& dir() const { return dir_; }
  std::size_t quarantined() const { return quarantined_.load(); }

 private:
  void quarantine(const std::filesystem::path& path, const std::string& why);

  std::filesystem::path dir_;
  std::atomic<std::size_t> quarantined_{0};
};

std::vector<std::string> cached_complete(const CompletionRequest& req, ChatBackend& backend,
                                         ResponseCache& cache);

}  // namespace perprompt

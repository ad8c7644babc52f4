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

#include "perprompt/llmclient.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "perprompt/errors.hpp"

namespace perprompt {

using nlohmann::json;

std::string_view to_string(RoleTag role) {
  switch (role) {
    case RoleTag::kGenerator:
      return "generator";
    case RoleTag::kEvaluator:
      return "evaluator";
    case RoleTag::kJudge:
      return "judge";
  }
  return "evaluator";
}

void CompletionRequest::validate() const {
  if (n < 1) throw ArgumentError("completion request needs n >= 1");
  if (!std::isfinite(temperature) || temperature < 0.0) {
    throw ArgumentError("temperature must be finite and non-negative");
  }
  if (max_tokens < 1) throw ArgumentError("max_tokens must be positive");
}

void BackendConfig::validate() const {
  if (!endpoint.starts_with("http://") && !endpoint.starts_with("https://")) {
    throw ConfigError("endpoint must be an http(s) URL: '" + endpoint + "'");
  }
  if (model.empty()) throw ConfigError("backend model is empty");
  if (timeout.count() <= 0) throw ConfigError("backend timeout must be positive");
  if (retry.max_attempts < 1) throw ConfigError("retry max_attempts must be at least 1");
  if (parallelism < 1) throw ConfigError("backend parallelism must be at least 1");
}

json chat_request_body(const CompletionRequest& req, std::string_view model) {
  json messages = json::array();
  for (const auto& m : req.messages.messages()) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  return {{"model", model},
          {"messages", std::move(messages)},
          {"temperature", req.temperature},
          {"n", req.n},
          {"max_tokens", req.max_tokens}};
}

std::vector<std::string> parse_chat_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array()) {
    throw ProtocolError("response has no choices array");
  }
  std::vector<std::pair<std::int64_t, std::string>> indexed;
  std::int64_t position = 0;
  for (const auto& c : j["choices"]) {
    if (!c.is_object() || !c.contains("message") || !c["message"].is_object()) {
      throw ProtocolError("choice has no message object");
    }
    const auto& content = c["message"].value("content", json());
    if (!content.is_string()) throw ProtocolError("choice message content is not a string");
    const auto idx = c.contains("index") && c["index"].is_number_integer()
                         ? c["index"].get<std::int64_t>()
                         : position;
    indexed.emplace_back(idx, content.get<std::string>());
    ++position;
  }
  std::stable_sort(indexed.begin(), indexed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  out.reserve(indexed.size());
  for (auto& [idx, text] : indexed) out.push_back(std::move(text));
  return out;
}

HttpChatBackend::HttpChatBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t scheme_end = config_.endpoint.find("://") + 3;
  const std::size_t path_start = config_.endpoint.find('/', scheme_end);
  scheme_host_port_ = config_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
}

std::vector<std::string> HttpChatBackend::request_once(const CompletionRequest& req, std::size_t n) {
  CompletionRequest sub = req;
  sub.n = n;
  const std::string body = chat_request_body(sub, config_.model).dump();

  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    const char* token = std::getenv(config_.auth_env.c_str());
    if (!token) throw ConfigError("auth env var " + config_.auth_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  auto delay = config_.retry.backoff;
  int last_status = 0;
  std::string last_error;
  for (std::size_t attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(delay);
      delay = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(delay.count()) * config_.retry.backoff_multiplier));
    }
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_status = 0;
      last_error = httplib::to_string(res.error());
      spdlog::warn("{} attempt {}/{}: {}", config_.endpoint, attempt, config_.retry.max_attempts,
                   last_error);
      continue;
    }
    last_status = res->status;
    if (res->status >= 200 && res->status < 300) return parse_chat_response(res->body);
    last_error = "HTTP " + std::to_string(res->status);
    if (res->status != 429 && res->status < 500) {
      throw BackendError(config_.endpoint + ": " + last_error, res->status, attempt);
    }
    spdlog::warn("{} attempt {}/{}: {}", config_.endpoint, attempt, config_.retry.max_attempts,
                 last_error);
  }
  throw BackendError(config_.endpoint + ": giving up after " +
                         std::to_string(config_.retry.max_attempts) + " attempts (" + last_error +
                         ")",
                     last_status, config_.retry.max_attempts);
}

std::vector<std::string> HttpChatBackend::complete(const CompletionRequest& req) {
  req.validate();
  std::vector<std::string> out;
  while (out.size() < req.n) {
    auto got = request_once(req, req.n - out.size());
    if (got.empty()) throw ProtocolError("server returned no choices");
    for (auto& s : got) {
      if (out.size() == req.n) break;
      out.push_back(std::move(s));
    }
  }
  return out;
}

ScriptedBackend::ScriptedBackend(std::string model, Responder responder)
    : model_(std::move(model)), responder_(std::move(responder)) {
  if (!responder_) throw ArgumentError("scripted backend needs a responder");
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_rules_file(const std::filesystem::path& path,
                                                                  std::string model) {
  struct Rule {
    std::optional<std::string> contains;
    std::optional<RoleTag> role;
    std::vector<std::string> completions;
  };
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open scripted rules " + path.string());
  std::vector<Rule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      Rule r;
      if (j.contains("contains")) r.contains = j.at("contains").get<std::string>();
      if (j.contains("role")) {
        const auto role = j.at("role").get<std::string>();
        if (role == "generator") {
          r.role = RoleTag::kGenerator;
        } else if (role == "evaluator") {
          r.role = RoleTag::kEvaluator;
        } else if (role == "judge") {
          r.role = RoleTag::kJudge;
        } else {
          throw ParseError("unknown role '" + role + "'", line_no);
        }
      }
      r.completions = j.at("completions").get<std::vector<std::string>>();
      if (r.completions.empty()) throw ParseError("rule has no completions", line_no);
      rules.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad scripted rule: ") + e.what(), line_no);
    }
  }
  auto responder = [rules = std::move(rules), source = path.string()](const CompletionRequest& req) {
    const std::string text = req.messages.flatten();
    for (const auto& r : rules) {
      if (r.role && *r.role != req.role_tag) continue;
      if (r.contains && text.find(*r.contains) == std::string::npos) continue;
      std::vector<std::string> out;
      for (std::size_t i = 0; i < req.n; ++i) out.push_back(r.completions[i % r.completions.size()]);
      return out;
    }
    throw BackendError("no scripted rule in " + source + " matches this " +
                       std::string(to_string(req.role_tag)) + " request");
  };
  return std::make_unique<ScriptedBackend>(std::move(model), std::move(responder));
}

std::vector<std::string> ScriptedBackend::complete(const CompletionRequest& req) {
  ++calls_;
  return responder_(req);
}

BoundedBackend::BoundedBackend(std::shared_ptr<ChatBackend> inner, std::size_t max_in_flight)
    : inner_(std::move(inner)), max_in_flight_(max_in_flight) {
  if (!inner_) throw ArgumentError("bounded backend needs an inner backend");
  if (max_in_flight_ < 1) throw ArgumentError("max_in_flight must be at least 1");
}

std::vector<std::string> BoundedBackend::complete(const CompletionRequest& req) {
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
    ++in_flight_;
  }
  struct Release {
    BoundedBackend* self;
    ~Release() {
      {
        std::lock_guard lock(self->mu_);
        --self->in_flight_;
      }
      self->cv_.notify_one();
    }
  } release{this};
  return inner_->complete(req);
}

std::vector<std::string> complete(const CompletionRequest& req, ChatBackend& backend) {
  req.validate();
  auto out = backend.complete(req);
  if (out.size() != req.n) {
    throw ProtocolError("backend returned " + std::to_string(out.size()) + " completions, expected " +
                        std::to_string(req.n));
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw StateError("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

json cache_key_material(const CompletionRequest& req, std::string_view model) {
  json j = chat_request_body(req, model);
  j["sample_seed"] = req.sample_seed;
  return j;
}

std::string cache_key(const CompletionRequest& req, std::string_view model) {
  return sha256_hex(cache_key_material(req, model).dump());
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::entry_path(const std::string& key) const {
  if (key.size() < 3) throw ArgumentError("cache key too short");
  return dir_ / key.substr(0, 2) / (key + ".json");
}

void ResponseCache::quarantine(const std::filesystem::path& path, const std::string& why) {
  std::error_code ec;
  for (std::size_t n = 0;; ++n) {
    auto target = path;
    target += ".corrupt-" + std::to_string(n);
    if (std::filesystem::exists(target, ec)) continue;
    std::filesystem::rename(path, target, ec);
    spdlog::warn("cache entry {} quarantined as {}: {}", path.string(), target.string(), why);
    break;
  }
  ++quarantined_;
}

std::optional<std::vector<std::string>> ResponseCache::lookup(const std::string& key) {
  const auto path = entry_path(key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  try {
    const json j = json::parse(text);
    if (j.at("key").get<std::string>() != key) {
      quarantine(path, "key mismatch");
      return std::nullopt;
    }
    const json& completions = j.at("completions");
    if (sha256_hex(completions.dump()) != j.at("checksum").get<std::string>()) {
      quarantine(path, "checksum mismatch");
      return std::nullopt;
    }
    return completions.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    quarantine(path, e.what());
    return std::nullopt;
  }
}

void ResponseCache::store(const std::string& key, const json& material,
                          const std::vector<std::string>& completions) {
  static std::atomic<std::uint64_t> seq{0};
  const auto path = entry_path(key);
  std::filesystem::create_directories(path.parent_path());
  const json completions_json = completions;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const json entry = {
      {"key", key},
      {"request_sha256", sha256_hex(material.dump())},
      {"completions", completions_json},
      {"checksum", sha256_hex(completions_json.dump())},
      {"timestamp", std::chrono::duration_cast<std::chrono::seconds>(now).count()}};
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(seq.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << entry.dump();
    out.flush();
    if (!out) throw StateError("cannot write cache entry " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> cached_complete(const CompletionRequest& req, ChatBackend& backend,
                                         ResponseCache& cache) {
  req.validate();
  const json material = cache_key_material(req, backend.model());
  const std::string key = sha256_hex(material.dump());
  if (auto hit = cache.lookup(key); hit && hit->size() == req.n) return *hit;
  auto out = complete(req, backend);
  cache.store(key, material, out);
  return out;
}

}  // namespace perprompt

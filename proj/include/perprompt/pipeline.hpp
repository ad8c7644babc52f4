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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "perprompt/corpus.hpp"
#include "perprompt/grpo.hpp"
#include "perprompt/llmclient.hpp"
#include "perprompt/mbr.hpp"
#include "perprompt/regularize.hpp"
#include "perprompt/reward.hpp"

namespace perprompt {

// Either an HTTP endpoint or a scripted rules file.
struct RoleBackendConfig {
  std::string kind = "scripted";  // "http" | "scripted"
  BackendConfig http;
  std::filesystem::path script;
  double temperature = 1.0;
  std::size_t max_tokens = 1024;
};

struct MbrConfig {
  std::size_t n = 8;
  // Empty: agreement for discrete families, consensus for generation.
  std::optional<MbrRegime> regime;
};

struct RunConfig {
  std::filesystem::path corpus;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> cache_dir;
  std::uint64_t seed = 0;
  RewardParams reward;
  RegularizationMode regularization;
  // Judge replies that are neither "1" nor "0" abort instead of counting as
  // no-leak.
  bool strict_judge = false;
  GrpoConfig grpo;
  MbrConfig mbr;
  std::map<std::string, RoleBackendConfig> backends;  // generator, evaluator, judge
  std::optional<SandboxConfig> sandbox;
  std::optional<ScriptedEnv> toy;
  std::map<std::string, double> task_weights;
  std::size_t workers = 4;

  // Relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
};

// The three model roles plus the optional code sandbox, built from config.
struct Backends {
  std::shared_ptr<ChatBackend> generator;
  std::shared_ptr<ChatBackend> evaluator;
  std::shared_ptr<ChatBackend> judge;
  std::shared_ptr<ResponseCache> cache;
  std::shared_ptr<CodeExecutor> executor;

  static Backends from_config(const RunConfig& cfg);
  std::vector<std::string> call(ChatBackend& backend, const CompletionRequest& req) const;
};

// Named sub-streams of the global seed.
struct SeedStreams {
  explicit SeedStreams(std::uint64_t seed)
      : corpus(Rng(seed).fork("corpus")),
        policy(Rng(seed).fork("policy")),
        regularization(Rng(seed).fork("regularization")),
        backend_salt(Rng(seed).fork("backend-salt")) {}
  Rng corpus;
  Rng policy;
  Rng regularization;
  Rng backend_salt;
};

struct TrainingArtifacts {
  std::filesystem::path history;          // history.jsonl
  std::optional<std::filesystem::path> rollouts;  // collection mode
  std::optional<std::filesystem::path> policy;    // toy mode
  std::vector<double> mean_reward;
};

// Toy mode: GRPO on the config's scripted bandit, with the configured
// regularization applied through the env's task grouping and leak table.
// Writes history.jsonl and policy.json.
TrainingArtifacts run_toy_training(const RunConfig& cfg);

// Collection mode: Algorithm-style loop against the configured backends
// for `iterations` steps; appends one scored group per step to
// rollouts_scored.jsonl. Does not update any model.
TrainingArtifacts run_rollout_collection(const RunConfig& cfg, const Backends& backends,
                                         std::size_t iterations);

struct ObservationResult {
  std::string obs_id;
  std::string task_id;
  bool ok = false;
  std::string error;
  std::vector<std::string> prompts;
  std::vector<std::string> answers;
  Selection selection;
  std::string winner;
  std::map<std::string, double> metrics;
};

struct EvaluationReport {
  std::vector<ObservationResult> observations;
  nlohmann::json summary;  // per-task and overall aggregates
  bool complete = true;

  std::string to_table() const;
};

// Per observation: N generator prompts (no regularization), one evaluator
// answer each, MBR selection, metric against ground truth. Writes
// report.json, report.txt and predictions.jsonl when `write` is set.
EvaluationReport run_evaluation(const RunConfig& cfg, const Backends& backends,
                                const TaskSet& split, bool write = true);

// Whole-word, case-insensitive occurrence test of the answer in the prompt.
// When competing labels are given, the prompt leaks only if the answer is
// mentioned more often than every other label.
bool literal_answer_leak(std::string_view prompt, std::string_view answer,
                         const std::vector<std::string>& labels = {});

struct AuditReport {
  std::size_t prompts = 0;
  std::size_t judge_flagged = 0;
  std::size_t judge_checked = 0;
  std::size_t verdict_errors = 0;
  std::size_t literal_checked = 0;
  std::size_t literal_flagged = 0;
  nlohmann::json rows = nlohmann::json::array();

  nlohmann::json to_json() const;
};

// prompts.jsonl: {"id", "prompt", "answer"?, "labels"?}. The judge is
// optional; without it only the literal check runs.
AuditReport judge_audit(const std::filesystem::path& prompts_path, ChatBackend* judge);

struct ScoreAudit {
  std::size_t groups = 0;
  std::size_t rollouts = 0;
  std::size_t mismatches = 0;
  double mean_reward = 0.0;
};

// Re-derives every exported total from its stored components.
ScoreAudit audit_rollouts(const std::filesystem::path& rollouts_path);

// candidates.jsonl {obs_id, outputs[]} -> {obs_id, winner_index, winner, scores[]}.
std::size_t mbr_decode_file(const std::filesystem::path& in, std::ostream& out, MbrRegime regime);

}  // namespace perprompt

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

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <mutex>
#include <condition_variable>
#include <string>
#include <string_view>

#include "perprompt/corpus.hpp"
#include "perprompt/tagparse.hpp"

namespace perprompt {

// Evaluator-side reward: what one call of the evaluator on (x, p) earns.
struct EvalScore {
  double format = 0.0;
  double alignment = 0.0;

  double total() const { return format + alignment; }
  EvalScore& operator+=(const EvalScore& other) {
    format += other.format;
    alignment += other.alignment;
    return *this;
  }
  EvalScore scaled(double factor) const { return {format * factor, alignment * factor}; }
};

struct RewardBreakdown {
  double r_token = 0.0;
  double r_structure = 0.0;
  double r_format = 0.0;
  double r_alignment = 0.0;
  double penalty = 0.0;  // 0 or -leak_penalty
  double total = 0.0;

  // total re-derived from the components, in the canonical order.
  double recomputed_total() const { return r_token + r_structure + r_format + r_alignment + penalty; }
};

RewardBreakdown total_reward(double token, double structure, double format, double alignment,
                             double penalty);
RewardBreakdown total_reward(const StructuredOutput& parse, const RewardParams& params,
                             const EvalScore& eval, double penalty);

// Pulls the answer out of raw evaluator text: the first line that matches
// the family's pattern after normalization, else the whole text normalized.
// Code answers have markdown fences stripped.
std::string extract_evaluator_answer(std::string_view raw, const TaskSpec& spec);

// 1 when the (normalized) answer has the family's expected shape.
double format_reward(std::string_view answer, const TaskSpec& spec);

struct CodeTestResult {
  bool passed = false;
  bool timed_out = false;
  bool name_matched = false;
  int exit_status = -1;
  std::string diagnostics;
};

class CodeExecutor {
 public:
  virtual ~CodeExecutor() = default;
  // Throws ExecutionError when the sandbox cannot run at all.
  virtual CodeTestResult run(std::string_view code, const CodeTestBundle& bundle) = 0;
};

// Matches a top-level or nested `def <name>(`.
bool defines_function(std::string_view code, std::string_view name);

// External sandbox invocation. The command template is run through
// /bin/sh with {file}, {dir} and {secs} replaced; exit status 0 is a pass.
//
// Workspace layout: <workspace>/run-<pid>-<seq>/<file_name> holding the
// candidate code, a blank line, then each test case on its own line;
// sandbox output goes to output.txt beside it. The run directory is
// removed afterwards unless keep_workspace is set.
struct SandboxConfig {
  std::string command_template = "python3 {file}";
  std::chrono::milliseconds timeout{10000};
  std::filesystem::path workspace = std::filesystem::temp_directory_path() / "perprompt-sandbox";
  std::string file_name = "solution.py";
  std::size_t max_concurrent = 4;
  bool keep_workspace = false;

  void validate() const;
};

// Throws ConfigError when the command's program cannot be found.
CodeTestResult run_code_tests(std::string_view code, const CodeTestBundle& bundle,
                              const SandboxConfig& config);

class SandboxExecutor : public CodeExecutor {
 public:
  explicit SandboxExecutor(SandboxConfig config);
  CodeTestResult run(std::string_view code, const CodeTestBundle& bundle) override;

 private:
  SandboxConfig config_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t running_ = 0;
};

// Ground-truth agreement of an extracted answer. Discrete families score
// {0, 1}, code {0, 2}, summarization the mean ROUGE-1/2/L F1 and
// simplification SARI / 100. Code requires an executor (ArgumentError
// otherwise).
double alignment_reward(std::string_view answer, const Observation& obs, const TaskSpec& spec,
                        CodeExecutor* executor = nullptr);

// format + alignment for one evaluator reply.
EvalScore score_evaluator_reply(std::string_view raw_reply, const Observation& obs,
                                const TaskSpec& spec, CodeExecutor* executor = nullptr);

}  // namespace perprompt

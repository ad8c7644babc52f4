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

#include "perprompt/reward.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "perprompt/errors.hpp"
#include "perprompt/metrics.hpp"

namespace perprompt {

namespace {

bool is_signed_integer(std::string_view s) {
  if (!s.empty() && s.front() == '-') s.remove_prefix(1);
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool in_label_set(std::string_view normalized, const TaskSpec& spec) {
  if (!spec.label_set) return false;
  return std::any_of(spec.label_set->begin(), spec.label_set->end(), [&](const std::string& label) {
    return normalize_answer(label, spec.family) == normalized;
  });
}

bool matches_pattern(std::string_view normalized, const TaskSpec& spec) {
  switch (spec.family) {
    case TaskFamily::kMathInteger:
      return is_signed_integer(normalized);
    case TaskFamily::kMathYesNo:
      return normalized == "Yes" || normalized == "No";
    case TaskFamily::kMultipleChoice:
    case TaskFamily::kClassification:
      return in_label_set(normalized, spec);
    default:
      return false;
  }
}

// Contents of the first ``` fenced block, without the info string.
std::string strip_code_fence(std::string_view raw) {
  const std::size_t open = raw.find("```");
  if (open == std::string_view::npos) return std::string(trim(raw));
  const std::size_t line_end = raw.find('\n', open);
  if (line_end == std::string_view::npos) return std::string(trim(raw));
  const std::size_t close = raw.find("```", line_end + 1);
  const std::string_view body = close == std::string_view::npos
                                    ? raw.substr(line_end + 1)
                                    : raw.substr(line_end + 1, close - line_end - 1);
  return std::string(body);
}

bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos;
       pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

// Single-quoted for /bin/sh.
std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += '\'';
  return out;
}

bool program_exists(const std::string& program) {
  if (program.find('/') != std::string::npos) return ::access(program.c_str(), X_OK) == 0;
  const char* path = std::getenv("PATH");
  if (!path) return false;
  std::stringstream dirs(path);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (dir.empty()) dir = ".";
    if (::access((dir + "/" + program).c_str(), X_OK) == 0) return true;
  }
  return false;
}

std::string first_word(std::string_view command) {
  command = trim(command);
  const auto end = std::find_if(command.begin(), command.end(), is_space);
  return std::string(command.begin(), end);
}

std::string read_tail(const std::filesystem::path& path, std::size_t max_bytes) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (content.size() > max_bytes) content = content.substr(content.size() - max_bytes);
  return content;
}

std::atomic<std::uint64_t> g_run_seq{0};

}  // namespace

RewardBreakdown total_reward(double token, double structure, double format, double alignment,
                             double penalty) {
  RewardBreakdown b{token, structure, format, alignment, penalty, 0.0};
  b.total = b.recomputed_total();
  return b;
}

RewardBreakdown total_reward(const StructuredOutput& parse, const RewardParams& params,
                             const EvalScore& eval, double penalty) {
  return total_reward(token_reward(parse, params), structure_reward(parse, params), eval.format,
                      eval.alignment, penalty);
}

std::string extract_evaluator_answer(std::string_view raw, const TaskSpec& spec) {
  if (spec.family == TaskFamily::kCodeUnderTest) return strip_code_fence(raw);
  if (is_generation(spec.family)) return std::string(trim(raw));
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t end = raw.find('\n', pos);
    if (end == std::string_view::npos) end = raw.size();
    const std::string line = normalize_answer(raw.substr(pos, end - pos), spec.family);
    if (matches_pattern(line, spec)) return line;
    pos = end + 1;
  }
  return normalize_answer(raw, spec.family);
}

double format_reward(std::string_view answer, const TaskSpec& spec) {
  if (spec.family == TaskFamily::kCodeUnderTest || is_generation(spec.family)) return 0.0;
  return matches_pattern(normalize_answer(answer, spec.family), spec) ? 1.0 : 0.0;
}

bool defines_function(std::string_view code, std::string_view name) {
  if (name.empty()) return false;
  for (std::size_t pos = code.find("def"); pos != std::string_view::npos;
       pos = code.find("def", pos + 3)) {
    if (pos > 0 && !is_space(code[pos - 1])) continue;
    std::size_t i = pos + 3;
    if (i >= code.size() || !is_space(code[i])) continue;
    while (i < code.size() && (code[i] == ' ' || code[i] == '\t')) ++i;
    if (code.substr(i, name.size()) != name) continue;
    i += name.size();
    if (i < code.size() && is_ident_char(code[i])) continue;
    while (i < code.size() && (code[i] == ' ' || code[i] == '\t')) ++i;
    if (i < code.size() && code[i] == '(') return true;
  }
  return false;
}

void SandboxConfig::validate() const {
  if (trim(command_template).empty()) throw ConfigError("sandbox command template is empty");
  if (command_template.find("{file}") == std::string::npos &&
      command_template.find("{dir}") == std::string::npos) {
    throw ConfigError("sandbox command template needs a {file} or {dir} placeholder");
  }
  if (timeout.count() <= 0) throw ConfigError("sandbox timeout must be positive");
  if (file_name.empty() || file_name.find('/') != std::string::npos) {
    throw ConfigError("sandbox file_name must be a plain file name");
  }
  if (max_concurrent == 0) throw ConfigError("sandbox max_concurrent must be at least 1");
}

CodeTestResult run_code_tests(std::string_view code, const CodeTestBundle& bundle,
                              const SandboxConfig& config) {
  config.validate();
  bundle.validate();
  CodeTestResult result;
  result.name_matched = defines_function(code, bundle.function_name);
  if (!result.name_matched) {
    result.diagnostics = "function '" + bundle.function_name + "' is not defined";
    return result;
  }

  const std::string program = first_word(config.command_template);
  if (!program_exists(program)) {
    throw ConfigError("sandbox program '" + program + "' not found");
  }

  namespace fs = std::filesystem;
  const fs::path dir = config.workspace / ("run-" + std::to_string(::getpid()) + "-" +
                                           std::to_string(g_run_seq.fetch_add(1)));
  fs::create_directories(dir);
  const fs::path file = dir / config.file_name;
  const fs::path output = dir / "output.txt";
  {
    std::ofstream out(file, std::ios::binary);
    out << code << "\n\n";
    for (const auto& t : bundle.test_cases) out << t << '\n';
    if (!out) throw ExecutionError("cannot write sandbox file " + file.string());
  }

  // The bundle's own timeout wins when it is tighter than the sandbox's.
  const auto timeout = std::min(config.timeout, bundle.timeout);
  const auto secs = (timeout.count() + 999) / 1000;
  std::string command = replace_all(config.command_template, "{file}", shell_quote(file.string()));
  command = replace_all(std::move(command), "{dir}", shell_quote(dir.string()));
  command = replace_all(std::move(command), "{secs}", std::to_string(secs));

  const std::string out_path = output.string();
  const pid_t pid = ::fork();
  if (pid < 0) throw ExecutionError("fork failed for sandbox command");
  if (pid == 0) {
    ::setpgid(0, 0);
    if (!std::freopen(out_path.c_str(), "w", stdout)) ::_exit(126);
    ::dup2(::fileno(stdout), STDERR_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }

  int status = 0;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  auto sleep_for = std::chrono::milliseconds(1);
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw ExecutionError("waitpid failed for sandbox command");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      result.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(sleep_for);
    sleep_for = std::min(sleep_for * 2, std::chrono::milliseconds(20));
  }

  result.diagnostics = read_tail(output, 4096);
  if (result.timed_out) {
    result.diagnostics += "\ntimed out after " + std::to_string(timeout.count()) + " ms";
  } else if (WIFEXITED(status)) {
    result.exit_status = WEXITSTATUS(status);
    if (result.exit_status == 127) {
      if (!config.keep_workspace) fs::remove_all(dir);
      throw ConfigError("sandbox command not runnable: " + std::string(trim(result.diagnostics)));
    }
    result.passed = result.exit_status == 0;
  } else if (WIFSIGNALED(status)) {
    result.diagnostics += "\nkilled by signal " + std::to_string(WTERMSIG(status));
  }
  if (!config.keep_workspace) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  return result;
}

SandboxExecutor::SandboxExecutor(SandboxConfig config) : config_(std::move(config)) {
  config_.validate();
}

CodeTestResult SandboxExecutor::run(std::string_view code, const CodeTestBundle& bundle) {
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return running_ < config_.max_concurrent; });
    ++running_;
  }
  struct Release {
    SandboxExecutor* self;
    ~Release() {
      {
        std::lock_guard lock(self->mu_);
        --self->running_;
      }
      self->cv_.notify_one();
    }
  } release{this};
  return run_code_tests(code, bundle, config_);
}

double alignment_reward(std::string_view answer, const Observation& obs, const TaskSpec& spec,
                        CodeExecutor* executor) {
  switch (spec.family) {
    case TaskFamily::kCodeUnderTest: {
      if (!executor) throw ArgumentError("code alignment needs an executor");
      const CodeTestBundle* bundle = obs.tests();
      if (!bundle) throw ArgumentError("observation '" + obs.obs_id + "' has no code tests");
      const CodeTestResult r = executor->run(answer, *bundle);
      if (!r.passed) spdlog::debug("code tests failed for {}: {}", obs.obs_id, r.diagnostics);
      return r.passed && r.name_matched ? 2.0 : 0.0;
    }
    case TaskFamily::kSummarization: {
      const auto* refs = obs.references();
      if (!refs) throw ArgumentError("observation '" + obs.obs_id + "' has no references");
      const double r1 = rouge_n_best(answer, *refs, 1).f1;
      const double r2 = rouge_n_best(answer, *refs, 2).f1;
      const double rl = rouge_l_best(answer, *refs).f1;
      return (r1 + r2 + rl) / 3.0;
    }
    case TaskFamily::kSimplification: {
      const auto* refs = obs.references();
      if (!refs) throw ArgumentError("observation '" + obs.obs_id + "' has no references");
      return sari(obs.input_text, answer, *refs) / 100.0;
    }
    default: {
      const std::string* truth = obs.answer();
      if (!truth) throw ArgumentError("observation '" + obs.obs_id + "' has no answer");
      return normalize_answer(answer, spec.family) == normalize_answer(*truth, spec.family) ? 1.0
                                                                                            : 0.0;
    }
  }
}

EvalScore score_evaluator_reply(std::string_view raw_reply, const Observation& obs,
                                const TaskSpec& spec, CodeExecutor* executor) {
  const std::string answer = extract_evaluator_answer(raw_reply, spec);
  return {format_reward(answer, spec), alignment_reward(answer, obs, spec, executor)};
}

}  // namespace perprompt

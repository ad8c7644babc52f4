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
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "perprompt/rng.hpp"
#include "perprompt/tagparse.hpp"
#include "perprompt/task_family.hpp"

namespace perprompt {

// Ground truth for a code task: the function the solution must define and
// assertion snippets appended after it.
struct CodeTestBundle {
  std::string function_name;
  std::vector<std::string> test_cases;
  std::chrono::milliseconds timeout{10000};

  void validate() const;
  bool operator==(const CodeTestBundle&) const = default;
};

struct TaskSpec {
  std::string task_id;
  TaskFamily family = TaskFamily::kMathInteger;
  std::string base_prompt;
  std::optional<std::vector<std::string>> label_set;
  // Per-task override of the run-wide reward weights.
  std::optional<RewardParams> reward_params;

  void validate() const;
};

// answer | references | tests
using GroundTruth = std::variant<std::string, std::vector<std::string>, CodeTestBundle>;

struct Observation {
  std::string obs_id;
  std::string task_id;
  std::string input_text;
  GroundTruth ground_truth;
  std::optional<std::vector<std::string>> choices;

  const std::string* answer() const { return std::get_if<std::string>(&ground_truth); }
  const std::vector<std::string>* references() const {
    return std::get_if<std::vector<std::string>>(&ground_truth);
  }
  const CodeTestBundle* tests() const { return std::get_if<CodeTestBundle>(&ground_truth); }
};

// Immutable, cross-linked tasks and observations. Safe for concurrent reads.
class TaskSet {
 public:
  TaskSet() = default;

  // Validates every record, rejects duplicate ids and dangling task ids.
  static TaskSet build(std::vector<TaskSpec> tasks, std::vector<Observation> observations);

  std::span<const TaskSpec> tasks() const { return tasks_; }
  std::span<const Observation> observations() const { return observations_; }
  bool empty() const { return observations_.empty(); }

  const TaskSpec* find_task(std::string_view task_id) const;
  const Observation* find_observation(std::string_view obs_id) const;
  // Throws ReferenceError when missing.
  const TaskSpec& task(std::string_view task_id) const;
  const TaskSpec& task_of(const Observation& obs) const { return task(obs.task_id); }
  // Indices into observations(), in file order.
  std::span<const std::size_t> observations_of(std::string_view task_id) const;

 private:
  std::vector<TaskSpec> tasks_;
  std::vector<Observation> observations_;
  std::unordered_map<std::string, std::size_t> task_index_;
  std::unordered_map<std::string, std::size_t> obs_index_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_task_;
};

// tasks.jsonl: one {"kind":"task"|"obs", ...} record per line. Blank lines
// are skipped. Records may appear in any order.
TaskSet load_tasks(const std::filesystem::path& path);
TaskSet parse_tasks(std::istream& in);
// Tasks first, then observations, in load order.
void write_tasks(const TaskSet& set, std::ostream& out);

enum class Role { kSystem, kUser };
std::string_view to_string(Role role);

struct Message {
  Role role;
  std::string content;
  bool operator==(const Message&) const = default;
};

// Exactly one system message, first, followed by user turns.
class MessageList {
 public:
  MessageList(std::string system, std::vector<std::string> user_turns);

  const std::vector<Message>& messages() const { return messages_; }
  const Message& system() const { return messages_.front(); }
  // Contents joined with blank lines, for logging and single-text backends.
  std::string flatten() const;
  bool operator==(const MessageList&) const = default;

 private:
  std::vector<Message> messages_;
};

MessageList render_generator_messages(std::string_view base_prompt, std::string_view observation_text);

// What the evaluator sees as the task input: the observation text, plus
// lettered choices for multiple-choice items.
std::string render_observation(const Observation& obs);
// The candidate prompt as instructions, the observation as the user turn.
MessageList render_evaluator_messages(std::string_view prompt, const Observation& obs);

struct Batch {
  const Observation* observation = nullptr;
  std::string_view base_prompt;
};

// Draws observations uniformly over the pool, or task-first when weights
// are given (task by weight, then uniform within the task).
class ObservationSampler {
 public:
  explicit ObservationSampler(const TaskSet& set, std::map<std::string, double> task_weights = {});
  Batch sample(Rng& rng) const;

 private:
  const TaskSet* set_;
  std::vector<std::string> weighted_tasks_;
  std::vector<double> weights_;
};

// Uniform draw; throws StateError on an empty set.
Batch sample_batch(const TaskSet& set, Rng& rng);

}  // namespace perprompt

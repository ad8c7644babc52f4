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

#include "perprompt/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "perprompt/errors.hpp"
#include "perprompt/templates.hpp"

namespace perprompt {

using nlohmann::json;

namespace {

constexpr std::pair<TaskFamily, std::string_view> kFamilyNames[] = {
    {TaskFamily::kMathInteger, "math_integer"},
    {TaskFamily::kMathYesNo, "math_yes_no"},
    {TaskFamily::kMultipleChoice, "multiple_choice"},
    {TaskFamily::kCodeUnderTest, "code_under_test"},
    {TaskFamily::kClassification, "classification"},
    {TaskFamily::kSummarization, "summarization"},
    {TaskFamily::kSimplification, "simplification"},
};

std::string require_string(const json& j, const char* key, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw ParseError(std::string("missing or non-string field '") + key + "'", line);
  }
  return it->get<std::string>();
}

std::vector<std::string> require_string_list(const json& j, const char* key, std::size_t line) {
  const auto& v = j.at(key);
  if (!v.is_array()) throw ParseError(std::string("field '") + key + "' must be an array", line);
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) {
      throw ParseError(std::string("field '") + key + "' must hold strings", line);
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

TaskSpec task_from_json(const json& j, std::size_t line) {
  TaskSpec t;
  t.task_id = require_string(j, "task_id", line);
  try {
    t.family = parse_task_family(require_string(j, "family", line));
  } catch (const ArgumentError& e) {
    throw ParseError(e.what(), line);
  }
  t.base_prompt = require_string(j, "base_prompt", line);
  if (j.contains("label_set")) t.label_set = require_string_list(j, "label_set", line);
  if (j.contains("reward_params")) {
    const auto& r = j.at("reward_params");
    RewardParams p;
    p.r_token_total = r.value("r_token_total", p.r_token_total);
    p.r_structure = r.value("r_structure", p.r_structure);
    p.leak_penalty = r.value("leak_penalty", p.leak_penalty);
    t.reward_params = p;
  }
  return t;
}

Observation obs_from_json(const json& j, std::size_t line) {
  Observation o;
  o.obs_id = require_string(j, "obs_id", line);
  o.task_id = require_string(j, "task_id", line);
  o.input_text = require_string(j, "input", line);
  const int variants = j.contains("answer") + j.contains("references") + j.contains("tests");
  if (variants != 1) {
    throw ParseError("observation needs exactly one of answer/references/tests", line);
  }
  if (j.contains("answer")) {
    o.ground_truth = require_string(j, "answer", line);
  } else if (j.contains("references")) {
    o.ground_truth = require_string_list(j, "references", line);
  } else {
    const auto& t = j.at("tests");
    if (!t.is_object()) throw ParseError("'tests' must be an object", line);
    CodeTestBundle b;
    b.function_name = require_string(t, "code_stub_name", line);
    b.test_cases = require_string_list(t, "test_cases", line);
    if (t.contains("timeout_s")) {
      b.timeout = std::chrono::milliseconds(
          static_cast<long long>(t.at("timeout_s").get<double>() * 1000.0));
    }
    o.ground_truth = std::move(b);
  }
  if (j.contains("choices")) o.choices = require_string_list(j, "choices", line);
  return o;
}

json task_to_json(const TaskSpec& t) {
  json j = {{"kind", "task"},
            {"task_id", t.task_id},
            {"family", to_string(t.family)},
            {"base_prompt", t.base_prompt}};
  if (t.label_set) j["label_set"] = *t.label_set;
  if (t.reward_params) {
    j["reward_params"] = {{"r_token_total", t.reward_params->r_token_total},
                          {"r_structure", t.reward_params->r_structure},
                          {"leak_penalty", t.reward_params->leak_penalty}};
  }
  return j;
}

json obs_to_json(const Observation& o) {
  json j = {{"kind", "obs"}, {"obs_id", o.obs_id}, {"task_id", o.task_id}, {"input", o.input_text}};
  if (const auto* a = o.answer()) j["answer"] = *a;
  if (const auto* r = o.references()) j["references"] = *r;
  if (const auto* t = o.tests()) {
    j["tests"] = {{"code_stub_name", t->function_name},
                  {"test_cases", t->test_cases},
                  {"timeout_s", static_cast<double>(t->timeout.count()) / 1000.0}};
  }
  if (o.choices) j["choices"] = *o.choices;
  return j;
}

}  // namespace

std::string_view to_string(TaskFamily family) {
  for (const auto& [f, name] : kFamilyNames) {
    if (f == family) return name;
  }
  return "unknown";
}

TaskFamily parse_task_family(std::string_view name) {
  for (const auto& [f, n] : kFamilyNames) {
    if (n == name) return f;
  }
  throw ArgumentError("unknown task family '" + std::string(name) + "'");
}

void CodeTestBundle::validate() const {
  if (function_name.empty()) throw ArgumentError("code test bundle needs a function name");
  if (timeout.count() <= 0) throw ArgumentError("code test timeout must be positive");
}

void TaskSpec::validate() const {
  if (task_id.empty()) throw ArgumentError("task_id is empty");
  if (base_prompt.empty()) throw ArgumentError("task '" + task_id + "': base_prompt is empty");
  if (uses_label_set(family) != label_set.has_value()) {
    throw ArgumentError("task '" + task_id + "': label_set is required for " +
                        "multiple_choice/classification and only for them");
  }
  if (label_set && label_set->empty()) {
    throw ArgumentError("task '" + task_id + "': label_set is empty");
  }
  if (reward_params) reward_params->validate();
}

TaskSet TaskSet::build(std::vector<TaskSpec> tasks, std::vector<Observation> observations) {
  TaskSet set;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    tasks[i].validate();
    if (!set.task_index_.emplace(tasks[i].task_id, i).second) {
      throw ArgumentError("duplicate task_id '" + tasks[i].task_id + "'");
    }
  }
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const Observation& o = observations[i];
    if (o.obs_id.empty()) throw ArgumentError("obs_id is empty");
    const auto it = set.task_index_.find(o.task_id);
    if (it == set.task_index_.end()) {
      throw ReferenceError("observation '" + o.obs_id + "' references unknown task '" +
                           o.task_id + "'");
    }
    const TaskFamily family = tasks[it->second].family;
    const bool refs = o.references() != nullptr;
    const bool code = o.tests() != nullptr;
    if (refs != is_generation(family) || code != (family == TaskFamily::kCodeUnderTest)) {
      throw ArgumentError("observation '" + o.obs_id + "': ground truth does not match family " +
                          std::string(to_string(family)));
    }
    if (refs && o.references()->empty()) {
      throw ArgumentError("observation '" + o.obs_id + "': references list is empty");
    }
    if (code) o.tests()->validate();
    if (!set.obs_index_.emplace(o.obs_id, i).second) {
      throw ArgumentError("duplicate obs_id '" + o.obs_id + "'");
    }
    set.by_task_[o.task_id].push_back(i);
  }
  set.tasks_ = std::move(tasks);
  set.observations_ = std::move(observations);
  return set;
}

const TaskSpec* TaskSet::find_task(std::string_view task_id) const {
  const auto it = task_index_.find(std::string(task_id));
  return it == task_index_.end() ? nullptr : &tasks_[it->second];
}

const Observation* TaskSet::find_observation(std::string_view obs_id) const {
  const auto it = obs_index_.find(std::string(obs_id));
  return it == obs_index_.end() ? nullptr : &observations_[it->second];
}

const TaskSpec& TaskSet::task(std::string_view task_id) const {
  if (const TaskSpec* t = find_task(task_id)) return *t;
  throw ReferenceError("unknown task '" + std::string(task_id) + "'");
}

std::span<const std::size_t> TaskSet::observations_of(std::string_view task_id) const {
  const auto it = by_task_.find(std::string(task_id));
  if (it == by_task_.end()) return {};
  return it->second;
}

TaskSet parse_tasks(std::istream& in) {
  std::vector<TaskSpec> tasks;
  std::vector<Observation> observations;
  std::unordered_set<std::string> task_ids;
  std::unordered_set<std::string> obs_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("record must be a JSON object", line_no);
    const std::string kind = require_string(j, "kind", line_no);
    try {
      if (kind == "task") {
        TaskSpec t = task_from_json(j, line_no);
        t.validate();
        if (!task_ids.insert(t.task_id).second) {
          throw ParseError("duplicate task_id '" + t.task_id + "'", line_no);
        }
        tasks.push_back(std::move(t));
      } else if (kind == "obs") {
        Observation o = obs_from_json(j, line_no);
        if (!obs_ids.insert(o.obs_id).second) {
          throw ParseError("duplicate obs_id '" + o.obs_id + "'", line_no);
        }
        observations.push_back(std::move(o));
      } else {
        throw ParseError("unknown record kind '" + kind + "'", line_no);
      }
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ArgumentError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  try {
    return TaskSet::build(std::move(tasks), std::move(observations));
  } catch (const ArgumentError& e) {
    throw ParseError(e.what());
  }
}

TaskSet load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open corpus file " + path.string());
  return parse_tasks(in);
}

void write_tasks(const TaskSet& set, std::ostream& out) {
  for (const auto& t : set.tasks()) out << task_to_json(t).dump() << '\n';
  for (const auto& o : set.observations()) out << obs_to_json(o).dump() << '\n';
}

std::string_view to_string(Role role) { return role == Role::kSystem ? "system" : "user"; }

MessageList::MessageList(std::string system, std::vector<std::string> user_turns) {
  messages_.push_back({Role::kSystem, std::move(system)});
  for (auto& u : user_turns) messages_.push_back({Role::kUser, std::move(u)});
}

std::string MessageList::flatten() const {
  std::string out;
  for (std::size_t i = 0; i < messages_.size(); ++i) {
    if (i > 0) out += "\n\n";
    out += messages_[i].content;
  }
  return out;
}

MessageList render_generator_messages(std::string_view base_prompt,
                                      std::string_view observation_text) {
  if (base_prompt.empty() || observation_text.empty()) {
    throw ArgumentError("generator messages need a base prompt and an observation");
  }
  std::string user = substitute(assets::generator_user(),
                                {{"base_prompt", base_prompt}, {"observation", observation_text}});
  return MessageList(std::string(assets::generator_system()), {std::move(user)});
}

std::string render_observation(const Observation& obs) {
  std::string out = obs.input_text;
  if (obs.choices) {
    for (std::size_t i = 0; i < obs.choices->size(); ++i) {
      out += '\n';
      out += static_cast<char>('A' + static_cast<int>(i % 26));
      out += ". ";
      out += (*obs.choices)[i];
    }
  }
  return out;
}

MessageList render_evaluator_messages(std::string_view prompt, const Observation& obs) {
  if (prompt.empty()) throw ArgumentError("evaluator prompt is empty");
  return MessageList(std::string(prompt), {render_observation(obs)});
}

ObservationSampler::ObservationSampler(const TaskSet& set, std::map<std::string, double> task_weights)
    : set_(&set) {
  for (const auto& [task_id, w] : task_weights) {
    if (!set.find_task(task_id)) {
      throw ReferenceError("task weight for unknown task '" + task_id + "'");
    }
    if (!(w >= 0.0)) throw ArgumentError("task weights must be non-negative");
    if (w > 0.0 && set.observations_of(task_id).empty()) {
      throw ArgumentError("task '" + task_id + "' has weight but no observations");
    }
    weighted_tasks_.push_back(task_id);
    weights_.push_back(w);
  }
}

Batch ObservationSampler::sample(Rng& rng) const {
  if (set_->empty()) throw StateError("cannot sample from an empty task set");
  const Observation* obs = nullptr;
  if (weighted_tasks_.empty()) {
    obs = &set_->observations()[rng.uniform_index(set_->observations().size())];
  } else {
    const std::string& task_id = weighted_tasks_[rng.categorical(weights_)];
    const auto members = set_->observations_of(task_id);
    obs = &set_->observations()[members[rng.uniform_index(members.size())]];
  }
  return {obs, set_->task_of(*obs).base_prompt};
}

Batch sample_batch(const TaskSet& set, Rng& rng) { return ObservationSampler(set).sample(rng); }

}  // namespace perprompt

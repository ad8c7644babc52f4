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

#include "perprompt/regularize.hpp"

#include <atomic>
#include <charconv>
#include <cmath>

#include <spdlog/spdlog.h>

#include "perprompt/errors.hpp"
#include "perprompt/templates.hpp"

namespace perprompt {

namespace {

std::atomic<std::uint64_t> g_invocations{0};

constexpr std::string_view kJudgeSlot = "The prompt to evaluate: {}";

double parse_probability(std::string_view text) {
  double p = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), p);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("bad swap probability '" + std::string(text) + "'");
  }
  return p;
}

}  // namespace

void RegularizationMode::validate() const {
  if (uses_sample()) {
    if (!(p_swap >= 0.0 && p_swap <= 1.0)) throw ConfigError("p_swap must lie in [0, 1]");
  } else if (p_swap != 0.0) {
    throw ConfigError("p_swap is only meaningful for sample modes");
  }
  if (subset_size < 1) throw ConfigError("subset_size must be at least 1");
  if (!std::isfinite(leak_penalty)) throw ConfigError("leak_penalty must be finite");
}

RegularizationMode RegularizationMode::parse(std::string_view text) {
  RegularizationMode mode;
  const std::size_t colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  if (head == "none") {
    mode.kind = RegularizationKind::kNone;
  } else if (head == "judge") {
    mode.kind = RegularizationKind::kJudge;
  } else if (head == "sample") {
    mode.kind = RegularizationKind::kSample;
  } else if (head == "judge+sample") {
    mode.kind = RegularizationKind::kJudgeAndSample;
  } else {
    throw ConfigError("unknown regularization mode '" + std::string(text) + "'");
  }
  if (mode.uses_sample() != (colon != std::string_view::npos)) {
    throw ConfigError("regularization '" + std::string(text) +
                      "': sample modes take ':<p>', others take nothing");
  }
  if (mode.uses_sample()) mode.p_swap = parse_probability(text.substr(colon + 1));
  mode.validate();
  return mode;
}

std::string RegularizationMode::to_string() const {
  switch (kind) {
    case RegularizationKind::kNone:
      return "none";
    case RegularizationKind::kJudge:
      return "judge";
    case RegularizationKind::kSample:
      return "sample:" + fmt::format("{}", p_swap);
    case RegularizationKind::kJudgeAndSample:
      return "judge+sample:" + fmt::format("{}", p_swap);
  }
  return "none";
}

MessageList judge_wrap(std::string_view prompt) {
  ++g_invocations;
  if (prompt.empty()) throw ArgumentError("judge prompt is empty");
  const std::string_view tmpl = assets::judge();
  const std::size_t slot = tmpl.rfind(kJudgeSlot);
  if (slot == std::string_view::npos || slot < 2) throw StateError("judge template has no slot");
  std::string system(tmpl.substr(0, slot - 2));
  std::string user(kJudgeSlot.substr(0, kJudgeSlot.size() - 2));
  user += prompt;
  return MessageList(std::move(system), {std::move(user)});
}

bool parse_judge_verdict(std::string_view text) {
  const std::string_view t = trim(text);
  if (t == "1") return true;
  if (t == "0") return false;
  throw VerdictParseError("judge verdict is neither '1' nor '0': '" + std::string(t.substr(0, 80)) +
                          "'");
}

double judge_regularize(double reward, bool leak, const RegularizationMode& mode) {
  ++g_invocations;
  return leak ? reward - mode.leak_penalty : reward;
}

SampleOutcome sample_regularize(std::string_view prompt, const Observation& observation,
                                const TaskSet& pool, const RegularizationMode& mode, Rng& rng,
                                const EvaluateFn& evaluate) {
  ++g_invocations;
  SampleOutcome out;
  const double u = rng.uniform01();
  if (u < mode.p_swap) {
    std::vector<std::size_t> others;
    for (std::size_t idx : pool.observations_of(observation.task_id)) {
      if (pool.observations()[idx].obs_id != observation.obs_id) others.push_back(idx);
    }
    if (others.size() >= mode.subset_size) {
      out.swapped = true;
      for (std::size_t pick : rng.sample_without_replacement(others.size(), mode.subset_size)) {
        const Observation& x = pool.observations()[others[pick]];
        out.score += evaluate(x, prompt);
        out.evaluated.push_back(x.obs_id);
      }
      if (mode.swap_reward == SwapReward::kMean) {
        out.score = out.score.scaled(1.0 / static_cast<double>(mode.subset_size));
      }
      return out;
    }
    spdlog::warn("task '{}' has {} other observations, need {}; evaluating '{}' without swap",
                 observation.task_id, others.size(), mode.subset_size, observation.obs_id);
    out.fell_back = true;
  }
  out.score = evaluate(observation, prompt);
  out.evaluated.push_back(observation.obs_id);
  return out;
}

RegularizedReward compute_regularized_reward(std::string_view prompt, const Observation& observation,
                                             const TaskSet& pool, const RegularizationMode& mode,
                                             Rng& rng, const EvaluateFn& evaluate,
                                             const JudgeFn& judge) {
  RegularizedReward out;
  if (mode.uses_sample()) {
    SampleOutcome s = sample_regularize(prompt, observation, pool, mode, rng, evaluate);
    out.score = s.score;
    out.swapped = s.swapped;
  } else {
    out.score = evaluate(observation, prompt);
  }
  if (mode.uses_judge()) {
    if (!judge) throw ArgumentError("judge regularization needs a judge");
    out.leak = judge(prompt);
    out.penalty = judge_regularize(0.0, *out.leak, mode);
  }
  return out;
}

std::uint64_t regularization_invocations() { return g_invocations.load(); }

}  // namespace perprompt

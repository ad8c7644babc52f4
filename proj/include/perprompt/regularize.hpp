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
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "perprompt/corpus.hpp"
#include "perprompt/reward.hpp"
#include "perprompt/rng.hpp"

namespace perprompt {

enum class RegularizationKind { kNone, kJudge, kSample, kJudgeAndSample };

// How the swap branch combines the subset rewards.
enum class SwapReward { kSum, kMean };

struct RegularizationMode {
  RegularizationKind kind = RegularizationKind::kNone;
  double p_swap = 0.0;
  std::size_t subset_size = 10;
  double leak_penalty = 1.0;
  SwapReward swap_reward = SwapReward::kSum;

  bool uses_judge() const {
    return kind == RegularizationKind::kJudge || kind == RegularizationKind::kJudgeAndSample;
  }
  bool uses_sample() const {
    return kind == RegularizationKind::kSample || kind == RegularizationKind::kJudgeAndSample;
  }
  void validate() const;

  // "none" | "judge" | "sample:<p>" | "judge+sample:<p>"
  static RegularizationMode parse(std::string_view text);
  std::string to_string() const;
};

// The judge template with `prompt` in its final slot. The instructions and
// examples form the system turn; "The prompt to evaluate: <prompt>" is the
// user turn, so flatten() reproduces the template text.
MessageList judge_wrap(std::string_view prompt);

// "1" -> leak, "0" -> no leak (surrounding whitespace ignored). Anything
// else throws VerdictParseError.
bool parse_judge_verdict(std::string_view text);

double judge_regularize(double reward, bool leak, const RegularizationMode& mode);

using EvaluateFn = std::function<EvalScore(const Observation&, std::string_view prompt)>;
using JudgeFn = std::function<bool(std::string_view prompt)>;

struct SampleOutcome {
  EvalScore score;
  bool swapped = false;
  // Swap was drawn but the task had too few other observations.
  bool fell_back = false;
  std::vector<std::string> evaluated;
};

// With probability p_swap, scores the prompt on subset_size other
// observations of the same task (drawn without replacement, excluding the
// original) instead of the observation it was written for.
SampleOutcome sample_regularize(std::string_view prompt, const Observation& observation,
                                const TaskSet& pool, const RegularizationMode& mode, Rng& rng,
                                const EvaluateFn& evaluate);

struct RegularizedReward {
  EvalScore score;
  double penalty = 0.0;
  bool swapped = false;
  std::optional<bool> leak;
};

// Evaluator reward for one extracted prompt under `mode`: sample
// regularization first, then the judge penalty.
RegularizedReward compute_regularized_reward(std::string_view prompt, const Observation& observation,
                                             const TaskSet& pool, const RegularizationMode& mode,
                                             Rng& rng, const EvaluateFn& evaluate,
                                             const JudgeFn& judge);

// Number of calls into judge_wrap / judge_regularize / sample_regularize
// since process start. Lets tests prove that inference never regularizes.
std::uint64_t regularization_invocations();

}  // namespace perprompt

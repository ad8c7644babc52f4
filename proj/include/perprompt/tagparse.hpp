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

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace perprompt {

enum class Marker : std::size_t { kThinkOpen = 0, kThinkClose, kAnswerOpen, kAnswerClose };

inline constexpr std::array<std::string_view, 4> kMarkerText = {
    "<think>", "</think>", "<answer>", "</answer>"};

// Weights of the generator-side rewards and the leak penalty magnitude.
struct RewardParams {
  double r_token_total = 1.0;
  double r_structure = 1.0;
  double leak_penalty = 1.0;

  // Throws ArgumentError unless all values are finite and the two reward
  // weights are non-negative.
  void validate() const;
};

// Generator output split into its reasoning and answer spans.
struct StructuredOutput {
  std::string raw;
  std::optional<std::string> think;
  std::optional<std::string> answer;
  // Literal occurrence counts, indexed by Marker.
  std::array<std::size_t, 4> marker_counts{};
  // `<think>...</think>` then `<answer>...</answer>`, each marker exactly
  // once, nothing but whitespace outside the two blocks.
  bool is_exact_two_phase = false;

  std::size_t count(Marker m) const { return marker_counts[static_cast<std::size_t>(m)]; }
};

// Total: never fails, for any byte string.
StructuredOutput parse_structured_output(std::string_view text);

// r_token_total / 4 for each marker occurring exactly once.
double token_reward(const StructuredOutput& parse, const RewardParams& params);

double structure_reward(const StructuredOutput& parse, const RewardParams& params);

// The answer span with surrounding whitespace trimmed. Empty after trimming
// counts as absent, since an empty prompt cannot be evaluated.
std::optional<std::string> extract_prompt(const StructuredOutput& parse);

bool is_space(char c);
std::string_view trim(std::string_view text);

}  // namespace perprompt

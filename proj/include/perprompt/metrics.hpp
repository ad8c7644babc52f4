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

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perprompt/task_family.hpp"

namespace perprompt {

struct Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  // f1 is 0 when precision + recall is 0, else the harmonic mean.
  static Score from(double precision, double recall);
};

// Lowercases ASCII and splits on every run of characters outside [a-z0-9].
// Bytes >= 0x80 act as separators.
std::vector<std::string> tokenize(std::string_view text);

using Tokens = std::span<const std::string>;

// Clipped n-gram overlap. Throws ArgumentError for n < 1.
Score rouge_n(std::string_view candidate, std::string_view reference, int n);
Score rouge_n(Tokens candidate, Tokens reference, int n);

// Longest-common-subsequence overlap on tokens.
Score rouge_l(std::string_view candidate, std::string_view reference);
Score rouge_l(Tokens candidate, Tokens reference);

// Multi-reference forms: the reference giving the highest F1 wins.
Score rouge_n_best(std::string_view candidate, std::span<const std::string> references, int n);
Score rouge_l_best(std::string_view candidate, std::span<const std::string> references);

// SARI in [0, 100] over n-gram orders 1..4 with add/keep F1 and delete
// precision. 0/0 components count as 1. Throws ArgumentError when
// references is empty.
double sari(std::string_view source, std::string_view candidate,
            std::span<const std::string> references);

// Canonical answer form used by format and exact-match checks.
std::string normalize_answer(std::string_view text, TaskFamily family);

}  // namespace perprompt

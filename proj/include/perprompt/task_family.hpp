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

#include <string_view>

namespace perprompt {

enum class TaskFamily {
  kMathInteger,
  kMathYesNo,
  kMultipleChoice,
  kCodeUnderTest,
  kClassification,
  kSummarization,
  kSimplification,
};

std::string_view to_string(TaskFamily family);
// Throws ArgumentError for unknown names.
TaskFamily parse_task_family(std::string_view name);

// Families whose answers are drawn from a fixed label set.
constexpr bool uses_label_set(TaskFamily family) {
  return family == TaskFamily::kMultipleChoice || family == TaskFamily::kClassification;
}

// Families scored by text overlap rather than exact match.
constexpr bool is_generation(TaskFamily family) {
  return family == TaskFamily::kSummarization || family == TaskFamily::kSimplification;
}

}  // namespace perprompt

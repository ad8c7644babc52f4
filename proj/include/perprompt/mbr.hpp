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
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace perprompt {

struct CandidateSet {
  std::string obs_id;
  std::vector<std::string> outputs;
  std::vector<std::string> prompts;  // empty, or index-aligned with outputs
};

struct Selection {
  std::size_t index = 0;
  std::vector<double> scores;
  // Another candidate with a different value reached the winning score.
  bool tie = false;
};

enum class MbrRegime { kAgreement, kConsensus };
MbrRegime parse_mbr_regime(std::string_view text);
std::string_view to_string(MbrRegime regime);

using Utility = std::function<double(std::string_view, std::string_view)>;

// Mean utility of each candidate against the others. include_self selects
// the 1/N form (sum over all k) or the leave-one-out 1/(N-1) form.
std::vector<double> expected_utilities(const std::vector<std::string>& outputs,
                                       const Utility& utility, bool include_self);

// Majority vote: u(y, y') = [y == y'], 1/N including self, lowest index on
// ties.
Selection agreement_select(const CandidateSet& set);

// (ROUGE-1 F1 + ROUGE-2 F1 + ROUGE-L F1) / 3.
double rouge_consensus_utility(std::string_view y, std::string_view y_prime);

// Leave-one-out mean consensus utility, lowest index on ties. A single
// candidate wins with score 1.
Selection consensus_select(const CandidateSet& set);

Selection mbr_select(const CandidateSet& set, MbrRegime regime);

}  // namespace perprompt

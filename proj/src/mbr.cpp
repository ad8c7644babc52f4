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

#include "perprompt/mbr.hpp"

#include "perprompt/errors.hpp"
#include "perprompt/metrics.hpp"

namespace perprompt {

namespace {

void check(const CandidateSet& set) {
  if (set.outputs.empty()) throw ArgumentError("MBR needs at least one candidate");
  if (!set.prompts.empty() && set.prompts.size() != set.outputs.size()) {
    throw ArgumentError("candidate prompts must align with outputs");
  }
}

Selection pick(const std::vector<std::string>& outputs, std::vector<double> scores) {
  Selection s;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[s.index]) s.index = j;
  }
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] == scores[s.index] && outputs[j] != outputs[s.index]) s.tie = true;
  }
  s.scores = std::move(scores);
  return s;
}

}  // namespace

MbrRegime parse_mbr_regime(std::string_view text) {
  if (text == "agreement") return MbrRegime::kAgreement;
  if (text == "consensus") return MbrRegime::kConsensus;
  throw ArgumentError("unknown MBR regime '" + std::string(text) + "'");
}

std::string_view to_string(MbrRegime regime) {
  return regime == MbrRegime::kAgreement ? "agreement" : "consensus";
}

std::vector<double> expected_utilities(const std::vector<std::string>& outputs,
                                       const Utility& utility, bool include_self) {
  const std::size_t n = outputs.size();
  if (n == 0) throw ArgumentError("expected utilities need candidates");
  std::vector<double> out(n, 0.0);
  if (!include_self && n == 1) {
    out[0] = 1.0;
    return out;
  }
  for (std::size_t j = 0; j < n; ++j) {
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == j && !include_self) continue;
      sum += utility(outputs[j], outputs[k]);
    }
    out[j] = sum / static_cast<double>(include_self ? n : n - 1);
  }
  return out;
}

Selection agreement_select(const CandidateSet& set) {
  check(set);
  auto same = [](std::string_view a, std::string_view b) { return a == b ? 1.0 : 0.0; };
  return pick(set.outputs, expected_utilities(set.outputs, same, true));
}

double rouge_consensus_utility(std::string_view y, std::string_view y_prime) {
  const auto a = tokenize(y);
  const auto b = tokenize(y_prime);
  return (rouge_n(a, b, 1).f1 + rouge_n(a, b, 2).f1 + rouge_l(a, b).f1) / 3.0;
}

Selection consensus_select(const CandidateSet& set) {
  check(set);
  return pick(set.outputs, expected_utilities(set.outputs, rouge_consensus_utility, false));
}

Selection mbr_select(const CandidateSet& set, MbrRegime regime) {
  return regime == MbrRegime::kAgreement ? agreement_select(set) : consensus_select(set);
}

}  // namespace perprompt

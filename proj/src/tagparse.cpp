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

#include "perprompt/tagparse.hpp"

#include <cmath>

#include "perprompt/errors.hpp"

namespace perprompt {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string_view trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_space(text[b])) ++b;
  while (e > b && is_space(text[e - 1])) --e;
  return text.substr(b, e - b);
}

void RewardParams::validate() const {
  if (!std::isfinite(r_token_total) || !std::isfinite(r_structure) || !std::isfinite(leak_penalty)) {
    throw ArgumentError("reward params must be finite");
  }
  if (r_token_total < 0.0 || r_structure < 0.0) {
    throw ArgumentError("r_token_total and r_structure must be non-negative");
  }
}

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Text between the first `open` and the first `close` after it.
std::optional<std::string> span_between(std::string_view text, std::string_view open,
                                        std::string_view close) {
  const std::size_t b = text.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  const std::size_t start = b + open.size();
  const std::size_t e = text.find(close, start);
  if (e == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(start, e - start));
}

bool exact_shape(std::string_view text) {
  const std::string_view body = trim(text);
  const auto& m = kMarkerText;
  if (!body.starts_with(m[0]) || !body.ends_with(m[3])) return false;
  const std::size_t think_close = body.find(m[1]);
  const std::size_t answer_open = body.find(m[2]);
  if (think_close == std::string_view::npos || answer_open == std::string_view::npos) return false;
  if (answer_open < think_close + m[1].size()) return false;
  for (std::size_t i = think_close + m[1].size(); i < answer_open; ++i) {
    if (!is_space(body[i])) return false;
  }
  // Closing answer marker must come after the opening one.
  return body.size() - m[3].size() >= answer_open + m[2].size();
}

}  // namespace

StructuredOutput parse_structured_output(std::string_view text) {
  StructuredOutput out;
  out.raw = std::string(text);
  bool all_once = true;
  for (std::size_t i = 0; i < kMarkerText.size(); ++i) {
    out.marker_counts[i] = count_occurrences(text, kMarkerText[i]);
    all_once = all_once && out.marker_counts[i] == 1;
  }
  out.think = span_between(text, kMarkerText[0], kMarkerText[1]);
  out.answer = span_between(text, kMarkerText[2], kMarkerText[3]);
  out.is_exact_two_phase = all_once && exact_shape(text);
  return out;
}

double token_reward(const StructuredOutput& parse, const RewardParams& params) {
  double total = 0.0;
  for (std::size_t count : parse.marker_counts) {
    if (count == 1) total += params.r_token_total / 4.0;
  }
  return total;
}

double structure_reward(const StructuredOutput& parse, const RewardParams& params) {
  return parse.is_exact_two_phase ? params.r_structure : 0.0;
}

std::optional<std::string> extract_prompt(const StructuredOutput& parse) {
  if (!parse.answer) return std::nullopt;
  const std::string_view trimmed = trim(*parse.answer);
  if (trimmed.empty()) return std::nullopt;
  return std::string(trimmed);
}

}  // namespace perprompt

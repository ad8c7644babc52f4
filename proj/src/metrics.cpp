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

#include "perprompt/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "perprompt/errors.hpp"
#include "perprompt/tagparse.hpp"

namespace perprompt {

namespace {

bool is_token_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'); }

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }
char ascii_upper(char c) { return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c; }

std::string join(Tokens tokens, std::size_t begin, std::size_t n) {
  std::string out;
  for (std::size_t i = begin; i < begin + n; ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::unordered_map<std::string, std::size_t> ngram_counts(Tokens tokens, std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[join(tokens, i, n)];
  return counts;
}

std::set<std::string> ngram_set(Tokens tokens, std::size_t n) {
  std::set<std::string> out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) out.insert(join(tokens, i, n));
  return out;
}

std::size_t lcs_length(Tokens a, Tokens b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Precision-weighted F with the 0/0 = 1 convention on each ratio.
double sari_f(double tp, double selected, double relevant, bool precision_only) {
  const double precision = selected > 0.0 ? tp / selected : 1.0;
  if (precision_only) return precision;
  const double recall = relevant > 0.0 ? tp / relevant : 1.0;
  if (precision > 0.0 && recall > 0.0) return 2.0 * precision * recall / (precision + recall);
  return 0.0;
}

struct SariParts {
  double keep = 0.0;
  double add = 0.0;
  double del = 0.0;
};

SariParts sari_order(Tokens source, Tokens candidate, const std::vector<std::vector<std::string>>& refs,
                     std::size_t n) {
  const auto src = ngram_set(source, n);
  const auto pred = ngram_set(candidate, n);

  // Fraction of references with at least n tokens that contain each n-gram.
  std::map<std::string, double> weighted;
  std::size_t nonempty = 0;
  for (const auto& r : refs) {
    const auto grams = ngram_set(r, n);
    if (grams.empty()) continue;
    ++nonempty;
    for (const auto& g : grams) weighted[g] += 1.0;
  }
  for (auto& [g, w] : weighted) w /= static_cast<double>(nonempty);
  const auto weight = [&](const std::string& g) {
    const auto it = weighted.find(g);
    return it == weighted.end() ? 0.0 : it->second;
  };

  SariParts parts;

  double add_tp = 0.0, add_sel = 0.0, add_rel = 0.0;
  for (const auto& g : pred) {
    if (src.count(g)) continue;
    add_sel += 1.0;
    if (weighted.count(g)) add_tp += 1.0;
  }
  for (const auto& [g, w] : weighted) {
    if (!src.count(g)) add_rel += 1.0;
  }
  parts.add = sari_f(add_tp, add_sel, add_rel, false);

  double keep_tp = 0.0, keep_sel = 0.0, keep_rel = 0.0;
  double del_tp = 0.0, del_sel = 0.0;
  for (const auto& g : src) {
    const double w = weight(g);
    if (pred.count(g)) {
      keep_sel += 1.0;
      keep_tp += w;
    } else {
      del_sel += 1.0;
      del_tp += 1.0 - w;
    }
    keep_rel += w;
  }
  parts.keep = sari_f(keep_tp, keep_sel, keep_rel, false);
  parts.del = sari_f(del_tp, del_sel, 0.0, true);
  return parts;
}

}  // namespace

Score Score::from(double precision, double recall) {
  const double sum = precision + recall;
  return {precision, recall, sum > 0.0 ? 2.0 * precision * recall / sum : 0.0};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char raw : text) {
    const char c = ascii_lower(raw);
    if (is_token_char(c)) {
      cur += c;
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Score rouge_n(Tokens candidate, Tokens reference, int n) {
  if (n < 1) throw ArgumentError("ROUGE-N order must be at least 1");
  const auto order = static_cast<std::size_t>(n);
  const auto cand = ngram_counts(candidate, order);
  const auto ref = ngram_counts(reference, order);
  std::size_t overlap = 0;
  for (const auto& [g, c] : cand) {
    const auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  const std::size_t cand_total = candidate.size() >= order ? candidate.size() - order + 1 : 0;
  const std::size_t ref_total = reference.size() >= order ? reference.size() - order + 1 : 0;
  const double o = static_cast<double>(overlap);
  return Score::from(o / static_cast<double>(std::max<std::size_t>(cand_total, 1)),
                     o / static_cast<double>(std::max<std::size_t>(ref_total, 1)));
}

Score rouge_n(std::string_view candidate, std::string_view reference, int n) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_n(c, r, n);
}

Score rouge_l(Tokens candidate, Tokens reference) {
  if (candidate.empty() || reference.empty()) return {};
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  return Score::from(lcs / static_cast<double>(candidate.size()),
                     lcs / static_cast<double>(reference.size()));
}

Score rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_l(c, r);
}

Score rouge_n_best(std::string_view candidate, std::span<const std::string> references, int n) {
  if (references.empty()) throw ArgumentError("ROUGE needs at least one reference");
  const auto c = tokenize(candidate);
  Score best;
  bool first = true;
  for (const auto& ref : references) {
    const auto r = tokenize(ref);
    const Score s = rouge_n(c, r, n);
    if (first || s.f1 > best.f1) best = s;
    first = false;
  }
  return best;
}

Score rouge_l_best(std::string_view candidate, std::span<const std::string> references) {
  if (references.empty()) throw ArgumentError("ROUGE needs at least one reference");
  const auto c = tokenize(candidate);
  Score best;
  bool first = true;
  for (const auto& ref : references) {
    const auto r = tokenize(ref);
    const Score s = rouge_l(c, r);
    if (first || s.f1 > best.f1) best = s;
    first = false;
  }
  return best;
}

double sari(std::string_view source, std::string_view candidate,
            std::span<const std::string> references) {
  if (references.empty()) throw ArgumentError("SARI needs at least one reference");
  const auto src = tokenize(source);
  const auto cand = tokenize(candidate);
  std::vector<std::vector<std::string>> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(tokenize(r));

  constexpr std::size_t kMaxOrder = 4;
  SariParts sum;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const SariParts p = sari_order(src, cand, refs, n);
    sum.keep += p.keep;
    sum.add += p.add;
    sum.del += p.del;
  }
  const double mean = (sum.keep + sum.add + sum.del) / (3.0 * kMaxOrder);
  return 100.0 * mean;
}

std::string normalize_answer(std::string_view text, TaskFamily family) {
  std::string_view t = trim(text);
  if (family == TaskFamily::kCodeUnderTest || is_generation(family)) return std::string(t);
  while (!t.empty() && t.back() == '.') t = trim(t.substr(0, t.size() - 1));
  if (uses_label_set(family) && t.size() >= 2) {
    const char q = t.front();
    if ((q == '"' || q == '\'' || q == '`') && t.back() == q) t = trim(t.substr(1, t.size() - 2));
  }
  std::string out(t);
  switch (family) {
    case TaskFamily::kMathInteger: {
      std::string digits;
      for (char c : out) {
        if (c != ',') digits += c;
      }
      if (!digits.empty() && digits.front() == '+') digits.erase(0, 1);
      return digits;
    }
    case TaskFamily::kMultipleChoice:
      std::transform(out.begin(), out.end(), out.begin(), ascii_upper);
      return out;
    case TaskFamily::kClassification:
      std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
      return out;
    default:
      return out;
  }
}

}  // namespace perprompt

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

// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "perprompt/corpus.hpp"
#include "perprompt/grpo.hpp"
#include "perprompt/llmclient.hpp"
#include "perprompt/mbr.hpp"
#include "perprompt/metrics.hpp"
#include "perprompt/pipeline.hpp"
#include "perprompt/regularize.hpp"
#include "perprompt/reward.hpp"
#include "perprompt/tagparse.hpp"
#include "test_support.hpp"

#ifndef PERPROMPT_CLI
#error "PERPROMPT_CLI must be defined by the build"
#endif

using namespace perprompt;
using namespace perprompt::testing;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, std::string_view name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  failures += !ok;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void metric_oracle() {
  const auto t0 = Clock::now();
  std::ifstream in(fixture("metrics_fixtures.jsonl"));
  std::size_t rows = 0, bad = 0;
  std::set<std::string> triples;
  double worst = 0.0;
  for (std::string line; std::getline(in, line);) {
    const auto j = json::parse(line);
    const auto refs = j.at("references").get<std::vector<std::string>>();
    const std::string cand = j.at("candidate");
    const std::string metric = j.at("metric");
    double got = 0.0;
    if (metric == "rouge1") {
      got = rouge_n_best(cand, refs, 1).f1;
    } else if (metric == "rouge2") {
      got = rouge_n_best(cand, refs, 2).f1;
    } else if (metric == "rougeL") {
      got = rouge_l_best(cand, refs).f1;
    } else {
      got = sari(j.at("source").get<std::string>(), cand, refs);
      triples.insert(line);
    }
    const double err = std::abs(got - j.at("expected").get<double>());
    worst = std::max(worst, err);
    bad += err > 1e-6;
    ++rows;
  }
  const double secs = seconds_since(t0);
  report(rows == 200 && triples.size() == 50 && bad == 0 && secs < 5.0, "metric-oracle",
         fmt::format("{} values over {} triples, {} outside 1e-6, max err {:.3g}, {:.3f} s", rows, triples.size(),
                     bad, worst, secs));
}

void mbr_oracles() {
  Rng rng(1001);
  std::size_t agreement_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(8);
    const std::size_t alphabet = 1 + rng.uniform_index(4);
    std::vector<std::string> outputs(n);
    for (auto& o : outputs) o = std::string(1, static_cast<char>('A' + rng.uniform_index(alphabet)));
    std::map<std::string, std::size_t> counts;
    for (const auto& o : outputs) ++counts[o];
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (counts[outputs[i]] > counts[outputs[best]]) best = i;
    }
    agreement_bad += agreement_select({"o", outputs, {}}).index != best;
  }

  const std::vector<std::string> phrases = {"the cat sat on the mat", "a cat sat on a mat", "the dog ran home",
                                            "cats sit on mats", "the cat is on the mat", "nothing here", "the mat",
                                            "dog and cat on the mat", "a dog sat"};
  std::size_t consensus_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(8);
    std::vector<std::string> outputs(n);
    for (auto& o : outputs) o = phrases[rng.uniform_index(phrases.size())];
    std::vector<std::vector<double>> u(n, std::vector<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        const auto a = tokenize(outputs[j]);
        const auto b = tokenize(outputs[k]);
        u[j][k] = (rouge_n(a, b, 1).f1 + rouge_n(a, b, 2).f1 + rouge_l(a, b).f1) / 3.0;
      }
    }
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 1.0;
      if (n > 1) {
        s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += k == j ? 0.0 : u[j][k];
        s /= static_cast<double>(n - 1);
      }
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    consensus_bad += consensus_select({"o", outputs, {}}).index != best;
  }
  report(agreement_bad == 0 && consensus_bad == 0, "mbr-oracles",
         fmt::format("agreement mismatches {}/1000, consensus mismatches {}/200", agreement_bad, consensus_bad));
}

void reward_suite() {
  Rng rng(2002);
  std::size_t additivity_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const double token = 0.25 * rng.uniform_index(5);
    const double structure = rng.uniform01() < 0.5 ? 0.0 : 1.0;
    const double format = rng.uniform01() < 0.5 ? 0.0 : 1.0;
    const double alignment = 2.0 * rng.uniform01();
    const double penalty = rng.uniform01() < 0.5 ? 0.0 : -1.0;
    const auto b = total_reward(token, structure, format, alignment, penalty);
    additivity_bad += b.total != token + structure + format + alignment + penalty || b.total != b.recomputed_total();
  }

  const std::vector<std::string> pieces = {"<think>", "</think>", "<answer>", "</answer>", "<", ">", "/", "think",
                                           "answer", "x", " ", "\n", "<th", "ink>", "</"};
  const RewardParams unit;
  std::size_t bound_bad = 0;
  std::string text;
  for (int i = 0; i < 10000; ++i) {
    if (text.size() > 400) text.clear();
    text.insert(rng.uniform_index(text.size() + 1), pieces[rng.uniform_index(pieces.size())]);
    const double r = token_reward(parse_structured_output(text), unit);
    bound_bad += !(r >= 0.0 && r <= unit.r_token_total);
  }

  // Judge path: a scripted judge that flags a prompt when the gold label
  // outnumbers every other label in it.
  const std::vector<std::string> labels = {"subjective", "objective"};
  ScriptedBackend judge("judge", [&labels](const CompletionRequest& req) {
    const std::string& user = req.messages.messages().back().content;
    const std::string marker = "The prompt to evaluate: ";
    const std::string prompt = user.substr(user.find(marker) + marker.size());
    return std::vector<std::string>(req.n, literal_answer_leak(prompt, "subjective", labels) ? "1" : "0");
  });
  const TaskSet pool = TaskSet::build(
      {{"subj", TaskFamily::kClassification, "Label it.", labels, std::nullopt}},
      {{"subj-0", "subj", "not since japanese filmmaker akira kurosawa's ran ...", std::string("subjective"),
        std::nullopt}});
  RegularizationMode mode = RegularizationMode::parse("judge");
  const EvaluateFn evaluate = [](const Observation&, std::string_view) { return EvalScore{1.0, 1.0}; };
  const JudgeFn judge_fn = [&judge](std::string_view prompt) {
    CompletionRequest req{judge_wrap(prompt), 0.0, 1, 16, RoleTag::kJudge, 0};
    return parse_judge_verdict(complete(req, judge).front());
  };
  std::map<std::string, RewardBreakdown> totals;
  std::ifstream leak_in(fixture("audit/leak_prompts.jsonl"));
  for (std::string line; std::getline(leak_in, line);) {
    const auto j = json::parse(line);
    const std::string output = "<think>rewrite</think>\n<answer>" + j.at("prompt").get<std::string>() + "</answer>";
    const auto parse = parse_structured_output(output);
    Rng r(1);
    const auto reg = compute_regularized_reward(*extract_prompt(parse), pool.observations()[0], pool, mode, r,
                                                evaluate, judge_fn);
    totals[j.at("id")] = total_reward(parse, unit, reg.score, reg.penalty);
  }
  const bool judge_ok = totals.size() == 2 && totals["leak"].penalty == -unit.leak_penalty &&
                        totals["leak"].total == 4.0 - unit.leak_penalty && totals["regularized"].penalty == 0.0 &&
                        totals["regularized"].total == 4.0;
  report(additivity_bad == 0 && bound_bad == 0 && judge_ok, "reward-suite",
         fmt::format("additivity violations {}/1000, token-bound violations {}/10000, leakage prompt total {} "
                     "(penalty {}), regularized prompt total {} (penalty {})",
                     additivity_bad, bound_bad, totals["leak"].total, totals["leak"].penalty,
                     totals["regularized"].total, totals["regularized"].penalty));
}

void grpo_convergence() {
  const auto t0 = Clock::now();
  std::size_t solved = 0;
  std::size_t worst_iters = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng env_rng(derive_seed(seed, "env"));
    ScriptedEnv env;
    env.contexts = 2;
    env.actions = 8;
    env.mean.assign(16, 0.0);
    std::vector<std::size_t> best(2);
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t a = 0; a < 8; ++a) env.mean[c * 8 + a] = 0.8 * env_rng.uniform01();
      best[c] = env_rng.uniform_index(8);
      env.mean[c * 8 + best[c]] = 1.0;
    }
    GrpoConfig cfg;
    cfg.iterations = 5000;
    const auto result = toy_train(env, cfg, seed);
    solved += result.policy.argmax(0) == best[0] && result.policy.argmax(1) == best[1];
    worst_iters = std::max(worst_iters, result.mean_reward.size());
  }
  const double secs = seconds_since(t0);
  report(solved >= 18 && worst_iters <= 5000 && secs < 60.0, "grpo-toy-convergence",
         fmt::format("{}/20 seeds optimal in both contexts after {} iterations, {:.2f} s", solved, worst_iters, secs));
}

void grpo_gradient() {
  Rng rng(3003);
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  while (checked < 100) {
    const std::size_t m = 2 + rng.uniform_index(7);
    std::vector<double> logits(m), ref_logits(m);
    for (std::size_t k = 0; k < m; ++k) {
      logits[k] = rng.normal();
      ref_logits[k] = rng.normal();
    }
    const auto ref = softmax(ref_logits);
    const auto p = softmax(logits);
    SurrogateBatch batch;
    const std::size_t n = 2 + rng.uniform_index(7);
    bool near_kink = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = rng.uniform_index(m);
      batch.actions.push_back(a);
      batch.advantages.push_back(rng.normal());
      batch.old_probs.push_back(p[a] * std::exp(0.4 * rng.normal()));
      const double ratio = p[a] / batch.old_probs.back();
      near_kink |= std::abs(ratio - 0.8) < 1e-4 || std::abs(ratio - 1.2) < 1e-4;
    }
    const double beta = rng.uniform01();
    if (near_kink) continue;
    const auto g = surrogate_gradient(logits, ref, batch, 0.2, beta);
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      auto up = logits, down = logits;
      up[k] += 1e-6;
      down[k] -= 1e-6;
      const double fd =
          (surrogate_objective(up, ref, batch, 0.2, beta) - surrogate_objective(down, ref, batch, 0.2, beta)) / 2e-6;
      diff2 += (g[k] - fd) * (g[k] - fd);
      norm2 += fd * fd;
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-8);
    worst = std::max(worst, rel);
    bad += rel >= 1e-5;
    ++checked;
  }
  report(bad == 0, "grpo-gradient",
         fmt::format("{}/100 instances above 1e-5 relative error, worst {:.3g}", bad, worst));
}

TaskSet answer_pool() {
  std::vector<Observation> obs;
  for (int i = 0; i < 20; ++i) {
    obs.push_back({"o" + std::to_string(i), "t", "x", "ans-" + std::to_string(i), std::nullopt});
  }
  return TaskSet::build({{"t", TaskFamily::kMathInteger, "b", std::nullopt, std::nullopt}}, std::move(obs));
}

void leakage_suppression() {
  const TaskSet pool = answer_pool();
  const Observation& x = pool.observations()[0];
  const EvaluateFn contains_answer = [](const Observation& o, std::string_view prompt) {
    return EvalScore{0.0, prompt.find(*o.answer()) != std::string_view::npos ? 1.0 : 0.0};
  };
  const EvaluateFn faithful = [](const Observation&, std::string_view) { return EvalScore{0.0, 1.0}; };
  std::string detail;
  bool ok = true;
  for (SwapReward combine : {SwapReward::kSum, SwapReward::kMean}) {
    RegularizationMode mode = RegularizationMode::parse("sample:0.5");
    mode.swap_reward = combine;
    Rng rng(4004);
    double leaky = 0.0, honest = 0.0;
    for (int i = 0; i < 1000; ++i) {
      leaky += sample_regularize("The answer is ans-0.", x, pool, mode, rng, contains_answer).score.total();
      honest += sample_regularize("Solve it.", x, pool, mode, rng, faithful).score.total();
    }
    const double gap = honest / 1000.0 - leaky / 1000.0;
    ok &= gap > 0.2;
    detail += fmt::format("{}{}: faithful {:.4f}, leaky {:.4f}, gap {:.4f}", detail.empty() ? "" : "; ",
                          combine == SwapReward::kSum ? "sum" : "mean", honest / 1000.0, leaky / 1000.0, gap);
  }
  report(ok, "sample-regularization-leak-gap", detail + " (p_swap 0.5, subset 10, 1000 trials)");
}

void swap_calibration() {
  const TaskSet pool = answer_pool();
  const EvaluateFn zero = [](const Observation&, std::string_view) { return EvalScore{}; };
  std::string detail;
  bool ok = true;
  for (double p : {0.1, 0.2, 0.5}) {
    RegularizationMode mode = RegularizationMode::parse(fmt::format("sample:{}", p));
    Rng rng(derive_seed(5005, std::to_string(p)));
    const int n = 10000;
    int swaps = 0;
    for (int i = 0; i < n; ++i) swaps += sample_regularize("p", pool.observations()[0], pool, mode, rng, zero).swapped;
    const double sigma = std::sqrt(n * p * (1 - p));
    const double z = (swaps - n * p) / sigma;
    ok &= std::abs(z) <= 3.0;
    detail += fmt::format("{}p={} rate={:.4f} z={:+.2f}", detail.empty() ? "" : ", ", p, swaps / double(n), z);
  }
  report(ok, "swap-frequency", detail);
}

int run_cli(const std::string& args, const TempDir& dir) {
  const std::string cmd = std::string(PERPROMPT_CLI) + " --log-level off " + args + " > " +
                          (dir / "stdout.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return files;
}

void determinism() {
  TempDir dir("accept-det");
  std::vector<std::map<std::string, std::string>> toy, eval;
  int bad_exit = 0;
  for (int run = 0; run < 2; ++run) {
    const auto toy_out = dir / ("toy" + std::to_string(run));
    const auto eval_out = dir / ("eval" + std::to_string(run));
    bad_exit += run_cli("train-toy --config " + fixture("toy/config.json").string() + " --out " + toy_out.string(), dir) != 0;
    bad_exit += run_cli("evaluate --config " + fixture("eval/config.json").string() + " --split " +
                            fixture("tasks_mixed.jsonl").string() + " --out " + eval_out.string(),
                        dir) != 0;
    toy.push_back(snapshot(toy_out));
    eval.push_back(snapshot(eval_out));
  }
  const bool ok = bad_exit == 0 && toy[0].size() == 2 && eval[0].size() == 3 && toy[0] == toy[1] && eval[0] == eval[1];
  report(ok, "determinism",
         fmt::format("train-toy {} files {}, evaluate {} files {}, non-zero exits {}", toy[0].size(),
                     toy[0] == toy[1] ? "identical" : "DIFFER", eval[0].size(),
                     eval[0] == eval[1] ? "identical" : "DIFFER", bad_exit));
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::off);
  metric_oracle();
  mbr_oracles();
  reward_suite();
  grpo_convergence();
  grpo_gradient();
  leakage_suppression();
  swap_calibration();
  determinism();
  std::cout << (failures == 0 ? "all acceptance criteria passed" : fmt::format("{} criteria failed", failures))
            << std::endl;
  return failures;
}

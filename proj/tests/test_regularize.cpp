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

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/sinks/ringbuffer_sink.h>
#include <spdlog/spdlog.h>

#include "perprompt/errors.hpp"
#include "perprompt/regularize.hpp"
#include "perprompt/templates.hpp"

using namespace perprompt;

namespace {

// One task with `n` observations whose answers are "ans-<i>".
TaskSet pool_of(std::size_t n, std::size_t tasks = 1) {
  std::vector<TaskSpec> ts;
  std::vector<Observation> obs;
  for (std::size_t t = 0; t < tasks; ++t) {
    ts.push_back({"task" + std::to_string(t), TaskFamily::kMathInteger, "b", std::nullopt, std::nullopt});
    for (std::size_t i = 0; i < n; ++i) {
      obs.push_back({"t" + std::to_string(t) + "-o" + std::to_string(i), "task" + std::to_string(t), "x",
                     std::string("ans-" + std::to_string(i)), std::nullopt});
    }
  }
  return TaskSet::build(std::move(ts), std::move(obs));
}

RegularizationMode sample_mode(double p, std::size_t subset) {
  RegularizationMode m;
  m.kind = RegularizationKind::kSample;
  m.p_swap = p;
  m.subset_size = subset;
  return m;
}

}  // namespace

TEST_CASE("judge_wrap reproduces the template") {
  const std::string prompt = "Classify the sentence.";
  const auto msgs = judge_wrap(prompt);
  REQUIRE(msgs.messages().size() == 2);
  std::string expected(assets::judge());
  expected.replace(expected.rfind("{}"), 2, prompt);
  CHECK(msgs.flatten() == expected);
  CHECK(msgs.messages()[1].content == "The prompt to evaluate: Classify the sentence.");
  CHECK(msgs.system().content.starts_with("You will receive a single text input"));
  // Placeholders inside the candidate are not expanded.
  CHECK(judge_wrap("{}").messages()[1].content == "The prompt to evaluate: {}");
  CHECK(judge_wrap(prompt) == msgs);
  CHECK_THROWS_AS(judge_wrap(""), ArgumentError);
}

TEST_CASE("judge verdict parsing") {
  CHECK(parse_judge_verdict("1\n"));
  CHECK(!parse_judge_verdict("0"));
  CHECK(!parse_judge_verdict("  0 "));
  CHECK_THROWS_AS(parse_judge_verdict("yes"), VerdictParseError);
  CHECK_THROWS_AS(parse_judge_verdict("10"), VerdictParseError);
  CHECK_THROWS_AS(parse_judge_verdict(""), VerdictParseError);
}

TEST_CASE("judge penalty") {
  RegularizationMode m;
  m.kind = RegularizationKind::kJudge;
  CHECK(judge_regularize(2.0, true, m) == 1.0);
  CHECK(judge_regularize(2.0, false, m) == 2.0);
  CHECK(judge_regularize(0.0, true, m) == -1.0);
  m.leak_penalty = 0.25;
  CHECK(judge_regularize(0.3, false, m) == 0.3);
  CHECK(judge_regularize(0.3, true, m) == 0.3 - 0.25);
}

TEST_CASE("mode parsing") {
  CHECK(RegularizationMode::parse("none").kind == RegularizationKind::kNone);
  CHECK(RegularizationMode::parse("judge").uses_judge());
  const auto s = RegularizationMode::parse("sample:0.2");
  CHECK(s.uses_sample());
  CHECK(!s.uses_judge());
  CHECK(s.p_swap == 0.2);
  const auto js = RegularizationMode::parse("judge+sample:0.5");
  CHECK(js.uses_judge());
  CHECK(js.uses_sample());
  CHECK(js.to_string() == "judge+sample:0.5");
  CHECK_THROWS_AS(RegularizationMode::parse("sample"), ConfigError);
  CHECK_THROWS_AS(RegularizationMode::parse("sample:1.5"), ConfigError);
  CHECK_THROWS_AS(RegularizationMode::parse("judge:0.1"), ConfigError);
  CHECK_THROWS_AS(RegularizationMode::parse("bogus"), ConfigError);
}

TEST_CASE("sample regularization") {
  const TaskSet pool = pool_of(5);
  const Observation& x = pool.observations()[0];
  std::map<std::string, double> reward = {{"t0-o0", 5.0}, {"t0-o1", 1.0}, {"t0-o2", 0.0},
                                          {"t0-o3", 1.0}, {"t0-o4", 0.0}};
  const EvaluateFn evaluate = [&](const Observation& o, std::string_view) {
    return EvalScore{0.0, reward.at(o.obs_id)};
  };

  SUBCASE("p = 0 always evaluates the original") {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
      const auto out = sample_regularize("p", x, pool, sample_mode(0.0, 3), rng, evaluate);
      CHECK(!out.swapped);
      CHECK(out.evaluated == std::vector<std::string>{"t0-o0"});
      CHECK(out.score.total() == 5.0);
    }
  }
  SUBCASE("p = 1 sums the subset") {
    // Per-observation rewards {1, 0, 1} over a 3-subset of a 4-pool
    // excluding the original.
    std::map<std::string, double> r2 = {{"t0-o0", 9.0}, {"t0-o1", 1.0}, {"t0-o2", 0.0}, {"t0-o3", 1.0}};
    const TaskSet four = pool_of(4);
    const EvaluateFn ev = [&](const Observation& o, std::string_view) { return EvalScore{0.0, r2.at(o.obs_id)}; };
    Rng rng(2);
    const auto out = sample_regularize("p", four.observations()[0], four, sample_mode(1.0, 3), rng, ev);
    CHECK(out.swapped);
    CHECK(out.evaluated.size() == 3);
    CHECK(out.score.total() == 2.0);
  }
  SUBCASE("subset excludes the original and has no repeats") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const auto out = sample_regularize("p", x, pool, sample_mode(1.0, 4), rng, evaluate);
      REQUIRE(out.evaluated.size() == 4);
      std::set<std::string> seen(out.evaluated.begin(), out.evaluated.end());
      CHECK(seen.size() == 4);
      CHECK(seen.count("t0-o0") == 0);
      CHECK(out.score.total() == 2.0);
    }
  }
  SUBCASE("mean mode divides by the subset size") {
    auto m = sample_mode(1.0, 4);
    m.swap_reward = SwapReward::kMean;
    Rng rng(4);
    CHECK(sample_regularize("p", x, pool, m, rng, evaluate).score.total() == 0.5);
  }
  SUBCASE("insufficient pool falls back with a warning") {
    auto sink = std::make_shared<spdlog::sinks::ringbuffer_sink_mt>(8);
    auto logger = std::make_shared<spdlog::logger>("capture", sink);
    auto previous = spdlog::default_logger();
    spdlog::set_default_logger(logger);
    logger->set_level(spdlog::level::warn);
    Rng rng(5);
    const auto out = sample_regularize("p", x, pool, sample_mode(1.0, 10), rng, evaluate);
    spdlog::set_default_logger(previous);
    CHECK(!out.swapped);
    CHECK(out.fell_back);
    CHECK(out.score.total() == 5.0);
    const auto lines = sink->last_formatted();
    REQUIRE(lines.size() == 1);
    CHECK(lines[0].find("without swap") != std::string::npos);
  }
  SUBCASE("other tasks are never drawn") {
    const TaskSet two = pool_of(4, 2);
    const EvaluateFn ev = [&](const Observation& o, std::string_view) {
      CHECK(o.task_id == "task1");
      return EvalScore{};
    };
    Rng rng(6);
    for (int i = 0; i < 50; ++i) sample_regularize("p", two.observations()[4], two, sample_mode(1.0, 3), rng, ev);
  }
}

TEST_CASE("swap frequency tracks p_swap") {
  const TaskSet pool = pool_of(12);
  const EvaluateFn zero = [](const Observation&, std::string_view) { return EvalScore{}; };
  for (double p : {0.1, 0.2, 0.5}) {
    Rng rng(derive_seed(99, std::to_string(p)));
    const int n = 10000;
    int swaps = 0;
    for (int i = 0; i < n; ++i) swaps += sample_regularize("p", pool.observations()[0], pool, sample_mode(p, 10), rng, zero).swapped;
    const double sigma = std::sqrt(n * p * (1 - p));
    INFO("p=" << p << " swaps=" << swaps);
    CHECK(std::abs(swaps - n * p) <= 3 * sigma);
  }
}

TEST_CASE("combined mode samples first, then applies the judge") {
  const TaskSet pool = pool_of(5);
  RegularizationMode m = RegularizationMode::parse("judge+sample:1");
  m.subset_size = 2;
  std::vector<std::string> order;
  const EvaluateFn evaluate = [&](const Observation& o, std::string_view) {
    order.push_back("eval:" + o.obs_id);
    return EvalScore{1.0, 1.0};
  };
  const JudgeFn judge = [&](std::string_view) {
    order.push_back("judge");
    return true;
  };
  Rng rng(8);
  const auto r = compute_regularized_reward("p", pool.observations()[0], pool, m, rng, evaluate, judge);
  CHECK(r.swapped);
  CHECK(r.score.total() == 4.0);
  CHECK(r.penalty == -1.0);
  REQUIRE(r.leak.has_value());
  CHECK(*r.leak);
  REQUIRE(order.size() == 3);
  CHECK(order.back() == "judge");
}

TEST_CASE("mode none never consults the judge") {
  const TaskSet pool = pool_of(2);
  const EvaluateFn evaluate = [](const Observation&, std::string_view) { return EvalScore{1.0, 0.0}; };
  const JudgeFn judge = [](std::string_view) -> bool { FAIL("judge called"); return true; };
  Rng rng(1);
  const auto r = compute_regularized_reward("p", pool.observations()[0], pool, RegularizationMode{}, rng, evaluate, judge);
  CHECK(r.penalty == 0.0);
  CHECK(!r.leak);
  CHECK(r.score.total() == 1.0);
}

TEST_CASE("leaky prompt loses reward under sample regularization") {
  // The oracle evaluator pays 1 exactly when the prompt contains the
  // observation's answer. The leaky prompt embeds x's answer; the faithful
  // one is scripted to be right everywhere.
  const TaskSet pool = pool_of(20);
  const Observation& x = pool.observations()[0];
  const EvaluateFn contains_answer = [](const Observation& o, std::string_view prompt) {
    return EvalScore{0.0, prompt.find(*o.answer()) != std::string_view::npos ? 1.0 : 0.0};
  };
  const EvaluateFn faithful = [](const Observation&, std::string_view) { return EvalScore{0.0, 1.0}; };
  for (SwapReward combine : {SwapReward::kSum, SwapReward::kMean}) {
    auto mode = sample_mode(0.5, 10);
    mode.swap_reward = combine;
    Rng rng(2026);
    double leaky_sum = 0, faithful_sum = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
      leaky_sum += sample_regularize("Answer: ans-0.", x, pool, mode, rng, contains_answer).score.total();
      faithful_sum += sample_regularize("Solve it.", x, pool, mode, rng, faithful).score.total();
    }
    const double gap = faithful_sum / trials - leaky_sum / trials;
    INFO("gap " << gap);
    CHECK(gap > 0.2);
  }
}

TEST_CASE("instrumentation counts regularization calls") {
  const auto before = regularization_invocations();
  judge_wrap("p");
  RegularizationMode m;
  judge_regularize(1.0, false, m);
  CHECK(regularization_invocations() == before + 2);
}

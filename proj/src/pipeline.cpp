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

#include "perprompt/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "perprompt/errors.hpp"
#include "perprompt/metrics.hpp"

namespace perprompt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

std::chrono::milliseconds seconds_to_ms(double secs) {
  return std::chrono::milliseconds(static_cast<long long>(secs * 1000.0));
}

RoleBackendConfig role_from_json(const json& j, const std::string& role, const fs::path& base) {
  check_keys(j, "backends." + role,
             {"kind", "script", "endpoint", "model", "auth_env", "timeout_s", "max_attempts",
              "backoff_ms", "parallelism", "temperature", "max_tokens"});
  RoleBackendConfig r;
  r.kind = j.value("kind", r.kind);
  r.temperature = j.value("temperature", r.temperature);
  r.max_tokens = j.value("max_tokens", r.max_tokens);
  if (r.kind == "scripted") {
    if (!j.contains("script")) throw ConfigError("backends." + role + ": scripted needs 'script'");
    r.script = resolve(j.at("script").get<std::string>(), base);
    if (!fs::exists(r.script)) throw ConfigError("script file not found: " + r.script.string());
  } else if (r.kind == "http") {
    r.http.endpoint = j.value("endpoint", "");
    r.http.model = j.value("model", "");
    r.http.auth_env = j.value("auth_env", "");
    if (j.contains("timeout_s")) r.http.timeout = seconds_to_ms(j.at("timeout_s").get<double>());
    r.http.retry.max_attempts = j.value("max_attempts", r.http.retry.max_attempts);
    if (j.contains("backoff_ms")) {
      r.http.retry.backoff = std::chrono::milliseconds(j.at("backoff_ms").get<long long>());
    }
    r.http.parallelism = j.value("parallelism", r.http.parallelism);
    r.http.validate();
  } else {
    throw ConfigError("backends." + role + ": kind must be 'http' or 'scripted'");
  }
  if (!std::isfinite(r.temperature) || r.temperature < 0.0) {
    throw ConfigError("backends." + role + ": temperature must be >= 0");
  }
  return r;
}

ScriptedEnv env_from_json(const json& j) {
  check_keys(j, "toy", {"contexts", "actions", "mean", "noise", "noise_stddev", "task_of_context", "leaky"});
  ScriptedEnv env;
  env.contexts = j.value("contexts", env.contexts);
  env.actions = j.value("actions", env.actions);
  env.mean = j.at("mean").get<std::vector<double>>();
  const std::string noise = j.value("noise", "none");
  if (noise == "none") {
    env.noise = RewardNoise::kNone;
  } else if (noise == "bernoulli") {
    env.noise = RewardNoise::kBernoulli;
  } else if (noise == "gaussian") {
    env.noise = RewardNoise::kGaussian;
  } else {
    throw ConfigError("toy.noise must be none, bernoulli or gaussian");
  }
  env.noise_stddev = j.value("noise_stddev", 0.0);
  if (j.contains("task_of_context")) {
    env.task_of_context = j.at("task_of_context").get<std::vector<std::size_t>>();
  }
  if (j.contains("leaky")) env.leaky = j.at("leaky").get<std::vector<bool>>();
  try {
    env.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("toy: ") + e.what());
  }
  return env;
}

SandboxConfig sandbox_from_json(const json& j, const fs::path& base) {
  check_keys(j, "sandbox", {"command", "timeout_s", "workspace", "file_name", "max_concurrent", "keep_workspace"});
  SandboxConfig s;
  s.command_template = j.value("command", s.command_template);
  if (j.contains("timeout_s")) s.timeout = seconds_to_ms(j.at("timeout_s").get<double>());
  if (j.contains("workspace")) s.workspace = resolve(j.at("workspace").get<std::string>(), base);
  s.file_name = j.value("file_name", s.file_name);
  s.max_concurrent = j.value("max_concurrent", s.max_concurrent);
  s.keep_workspace = j.value("keep_workspace", s.keep_workspace);
  s.validate();
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::size_t count_whole_word(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right = end == haystack.size() || !is_word_char(haystack[end]);
    if (left && right) ++n;
  }
  return n;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), line_no);
    }
    if (!out.back().is_object()) throw ParseError("record must be an object", line_no);
  }
  return out;
}

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot write " + path.string());
  return out;
}

const RoleBackendConfig& role_config(const RunConfig& cfg, const std::string& role) {
  static const RoleBackendConfig kDefault;
  const auto it = cfg.backends.find(role);
  return it == cfg.backends.end() ? kDefault : it->second;
}

ChatBackend& require(const std::shared_ptr<ChatBackend>& b, const char* role) {
  if (!b) throw ConfigError(std::string("no ") + role + " backend configured");
  return *b;
}

const RewardParams& params_for(const RunConfig& cfg, const TaskSpec& task) {
  return task.reward_params ? *task.reward_params : cfg.reward;
}

// Judge reply -> leak flag, honouring strict mode.
bool judge_verdict(const std::vector<std::string>& reply, bool strict) {
  try {
    return parse_judge_verdict(reply.front());
  } catch (const VerdictParseError& e) {
    if (strict) throw;
    spdlog::warn("{}; counting as no leak", e.what());
    return false;
  }
}

MbrRegime regime_for(const RunConfig& cfg, TaskFamily family) {
  if (cfg.mbr.regime) return *cfg.mbr.regime;
  return is_generation(family) ? MbrRegime::kConsensus : MbrRegime::kAgreement;
}

std::map<std::string, double> metrics_for(const std::string& winner, const Observation& obs,
                                          const TaskSpec& task, CodeExecutor* executor) {
  std::map<std::string, double> m;
  switch (task.family) {
    case TaskFamily::kSummarization: {
      const auto& refs = *obs.references();
      m["rouge1"] = rouge_n_best(winner, refs, 1).f1;
      m["rouge2"] = rouge_n_best(winner, refs, 2).f1;
      m["rougeL"] = rouge_l_best(winner, refs).f1;
      break;
    }
    case TaskFamily::kSimplification:
      m["sari"] = sari(obs.input_text, winner, *obs.references());
      break;
    case TaskFamily::kCodeUnderTest:
      m["pass"] = alignment_reward(winner, obs, task, executor) / 2.0;
      break;
    default:
      m["accuracy"] = alignment_reward(winner, obs, task, executor);
      m["format"] = format_reward(winner, task);
      break;
  }
  return m;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, "config",
             {"corpus", "output_dir", "cache_dir", "seed", "reward", "regularization", "strict_judge",
              "grpo", "mbr", "backends", "sandbox", "toy", "task_weights", "workers"});
  RunConfig cfg;
  try {
    if (j.contains("corpus")) cfg.corpus = resolve(j.at("corpus").get<std::string>(), base_dir);
    cfg.output_dir = resolve(j.value("output_dir", std::string("out")), base_dir);
    if (j.contains("cache_dir") && !j.at("cache_dir").is_null()) {
      cfg.cache_dir = resolve(j.at("cache_dir").get<std::string>(), base_dir);
    }
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("reward")) {
      const auto& r = j.at("reward");
      check_keys(r, "reward", {"r_token_total", "r_structure", "leak_penalty"});
      cfg.reward.r_token_total = r.value("r_token_total", cfg.reward.r_token_total);
      cfg.reward.r_structure = r.value("r_structure", cfg.reward.r_structure);
      cfg.reward.leak_penalty = r.value("leak_penalty", cfg.reward.leak_penalty);
      cfg.reward.validate();
    }
    if (j.contains("regularization")) {
      const auto& r = j.at("regularization");
      if (r.is_string()) {
        cfg.regularization = RegularizationMode::parse(r.get<std::string>());
      } else {
        check_keys(r, "regularization", {"mode", "subset_size", "swap_reward"});
        cfg.regularization = RegularizationMode::parse(r.value("mode", std::string("none")));
        cfg.regularization.subset_size = r.value("subset_size", cfg.regularization.subset_size);
        const std::string swap = r.value("swap_reward", std::string("sum"));
        if (swap != "sum" && swap != "mean") throw ConfigError("swap_reward must be sum or mean");
        cfg.regularization.swap_reward = swap == "sum" ? SwapReward::kSum : SwapReward::kMean;
      }
    }
    cfg.regularization.leak_penalty = cfg.reward.leak_penalty;
    cfg.regularization.validate();
    cfg.strict_judge = j.value("strict_judge", cfg.strict_judge);
    if (j.contains("grpo")) {
      const auto& g = j.at("grpo");
      check_keys(g, "grpo", {"epsilon", "beta", "group_size", "std_floor", "learning_rate", "iterations", "inner_epochs"});
      cfg.grpo.epsilon = g.value("epsilon", cfg.grpo.epsilon);
      cfg.grpo.beta = g.value("beta", cfg.grpo.beta);
      cfg.grpo.group_size = g.value("group_size", cfg.grpo.group_size);
      cfg.grpo.std_floor = g.value("std_floor", cfg.grpo.std_floor);
      cfg.grpo.learning_rate = g.value("learning_rate", cfg.grpo.learning_rate);
      cfg.grpo.iterations = g.value("iterations", cfg.grpo.iterations);
      cfg.grpo.inner_epochs = g.value("inner_epochs", cfg.grpo.inner_epochs);
    }
    if (j.contains("mbr")) {
      const auto& m = j.at("mbr");
      check_keys(m, "mbr", {"n", "regime"});
      cfg.mbr.n = m.value("n", cfg.mbr.n);
      if (m.contains("regime") && !m.at("regime").is_null()) {
        cfg.mbr.regime = parse_mbr_regime(m.at("regime").get<std::string>());
      }
      if (cfg.mbr.n < 1) throw ConfigError("mbr.n must be at least 1");
    }
    if (j.contains("backends")) {
      for (const auto& [role, rj] : j.at("backends").items()) {
        if (role != "generator" && role != "evaluator" && role != "judge") {
          throw ConfigError("unknown backend role '" + role + "'");
        }
        cfg.backends[role] = role_from_json(rj, role, base_dir);
      }
    }
    if (j.contains("sandbox")) cfg.sandbox = sandbox_from_json(j.at("sandbox"), base_dir);
    if (j.contains("toy")) cfg.toy = env_from_json(j.at("toy"));
    if (j.contains("task_weights")) {
      cfg.task_weights = j.at("task_weights").get<std::map<std::string, double>>();
    }
    cfg.workers = j.value("workers", cfg.workers);
    if (cfg.workers < 1) throw ConfigError("workers must be at least 1");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    cfg.grpo.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!cfg.corpus.empty() && !fs::exists(cfg.corpus)) {
    throw ConfigError("corpus file not found: " + cfg.corpus.string());
  }
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

Backends Backends::from_config(const RunConfig& cfg) {
  Backends b;
  for (const auto& [role, rc] : cfg.backends) {
    std::shared_ptr<ChatBackend> inner;
    std::size_t cap = cfg.workers;
    if (rc.kind == "scripted") {
      inner = ScriptedBackend::from_rules_file(rc.script, "scripted:" + rc.script.filename().string());
    } else {
      inner = std::make_shared<HttpChatBackend>(rc.http);
      cap = rc.http.parallelism;
    }
    auto bounded = std::make_shared<BoundedBackend>(std::move(inner), cap);
    if (role == "generator") b.generator = bounded;
    if (role == "evaluator") b.evaluator = bounded;
    if (role == "judge") b.judge = bounded;
  }
  if (cfg.cache_dir) b.cache = std::make_shared<ResponseCache>(*cfg.cache_dir);
  b.executor = std::make_shared<SandboxExecutor>(cfg.sandbox.value_or(SandboxConfig{}));
  return b;
}

std::vector<std::string> Backends::call(ChatBackend& backend, const CompletionRequest& req) const {
  return cache ? cached_complete(req, backend, *cache) : complete(req, backend);
}

TrainingArtifacts run_toy_training(const RunConfig& cfg) {
  if (!cfg.toy) throw ConfigError("train-toy needs a 'toy' section");
  const ScriptedEnv& env = *cfg.toy;
  const RegularizationMode& mode = cfg.regularization;

  // Contexts become observations grouped into tasks so the regularize
  // module runs unchanged against the bandit.
  std::vector<TaskSpec> tasks;
  std::vector<Observation> obs;
  std::set<std::size_t> task_ids;
  for (std::size_t c = 0; c < env.contexts; ++c) {
    const std::size_t t = env.task_of_context.empty() ? 0 : env.task_of_context[c];
    if (task_ids.insert(t).second) {
      tasks.push_back({"task-" + std::to_string(t), TaskFamily::kMathInteger, "toy", std::nullopt, std::nullopt});
    }
    obs.push_back({"ctx-" + std::to_string(c), "task-" + std::to_string(t), "toy", std::string("0"), std::nullopt});
  }
  const TaskSet pool = TaskSet::build(std::move(tasks), std::move(obs));

  ToyRewardFn reward;
  if (mode.kind != RegularizationKind::kNone) {
    reward = [&env, &mode, &pool](std::size_t c, std::size_t a, Rng& rng) {
      const auto evaluate = [&](const Observation& o, std::string_view) {
        const auto ctx = static_cast<std::size_t>(&o - pool.observations().data());
        return EvalScore{0.0, env.draw(ctx, a, rng)};
      };
      const auto judge = [&](std::string_view) { return env.is_leaky(c, a); };
      const auto r = compute_regularized_reward("action-" + std::to_string(a), pool.observations()[c],
                                                pool, mode, rng, evaluate, judge);
      return r.score.total() + r.penalty;
    };
  }

  const ToyTrainResult result = toy_train(env, cfg.grpo, SeedStreams(cfg.seed).policy.next_u64(), reward);

  TrainingArtifacts art;
  art.history = cfg.output_dir / "history.jsonl";
  art.policy = cfg.output_dir / "policy.json";
  art.mean_reward = result.mean_reward;
  {
    auto out = open_output(art.history);
    for (std::size_t t = 0; t < result.mean_reward.size(); ++t) {
      out << json{{"iteration", t}, {"context", result.contexts[t]}, {"mean_reward", result.mean_reward[t]}}.dump()
          << '\n';
    }
  }
  json policy = {{"contexts", env.contexts}, {"actions", env.actions}, {"seed", cfg.seed}};
  for (std::size_t c = 0; c < env.contexts; ++c) {
    const auto l = result.policy.logits(c);
    policy["logits"].push_back(std::vector<double>(l.begin(), l.end()));
    policy["probabilities"].push_back(result.policy.probabilities(c));
    policy["argmax"].push_back(result.policy.argmax(c));
    policy["best_action"].push_back(env.best_action(c));
  }
  auto out = open_output(*art.policy);
  out << policy.dump(2) << '\n';
  return art;
}

TrainingArtifacts run_rollout_collection(const RunConfig& cfg, const Backends& backends,
                                         std::size_t iterations) {
  const TaskSet set = load_tasks(cfg.corpus);
  if (set.empty()) throw StateError("corpus has no observations");
  ChatBackend& generator = require(backends.generator, "generator");
  ChatBackend& evaluator = require(backends.evaluator, "evaluator");
  ChatBackend* judge = cfg.regularization.uses_judge() ? &require(backends.judge, "judge") : nullptr;
  const RoleBackendConfig& gen_cfg = role_config(cfg, "generator");
  const RoleBackendConfig& eval_cfg = role_config(cfg, "evaluator");
  const RoleBackendConfig& judge_cfg = role_config(cfg, "judge");

  SeedStreams streams(cfg.seed);
  const ObservationSampler sampler(set, cfg.task_weights);

  TrainingArtifacts art;
  art.history = cfg.output_dir / "history.jsonl";
  art.rollouts = cfg.output_dir / "rollouts_scored.jsonl";
  auto history = open_output(art.history);
  auto rollouts = open_output(*art.rollouts);

  for (std::size_t step = 0; step < iterations; ++step) {
    try {
      const Batch batch = sampler.sample(streams.corpus);
      const Observation& x = *batch.observation;
      const TaskSpec& task = set.task_of(x);
      const RewardParams& params = params_for(cfg, task);
      RegularizationMode mode = cfg.regularization;
      mode.leak_penalty = params.leak_penalty;

      CompletionRequest gen_req{render_generator_messages(batch.base_prompt, render_observation(x)),
                                gen_cfg.temperature, cfg.grpo.group_size, gen_cfg.max_tokens,
                                RoleTag::kGenerator, streams.backend_salt.next_u64()};
      const auto outputs = backends.call(generator, gen_req);

      const EvaluateFn evaluate = [&](const Observation& o, std::string_view prompt) {
        CompletionRequest req{render_evaluator_messages(prompt, o), eval_cfg.temperature, 1,
                              eval_cfg.max_tokens, RoleTag::kEvaluator, streams.backend_salt.next_u64()};
        const auto reply = backends.call(evaluator, req);
        return score_evaluator_reply(reply.front(), o, set.task_of(o), backends.executor.get());
      };
      const JudgeFn judge_fn = [&](std::string_view prompt) {
        CompletionRequest req{judge_wrap(prompt), judge_cfg.temperature, 1, judge_cfg.max_tokens,
                              RoleTag::kJudge, streams.backend_salt.next_u64()};
        return judge_verdict(backends.call(*judge, req), cfg.strict_judge);
      };

      RolloutGroup group;
      group.obs_id = x.obs_id;
      group.step = step;
      for (const auto& o : outputs) {
        const StructuredOutput parse = parse_structured_output(o);
        const auto prompt = extract_prompt(parse);
        EvalScore score;
        double penalty = 0.0;
        if (prompt) {
          const RegularizedReward r = compute_regularized_reward(
              *prompt, x, set, mode, streams.regularization, evaluate, judge_fn);
          score = r.score;
          penalty = r.penalty;
        }
        const RewardBreakdown b = total_reward(parse, params, score, penalty);
        group.outputs.push_back(o);
        group.prompts.push_back(prompt);
        group.components.push_back(b);
        group.rewards.push_back(b.total);
      }
      group.advantages = group_advantages(group.rewards, cfg.grpo.std_floor);
      rollouts << group.to_json().dump() << '\n';
      const double mean = std::accumulate(group.rewards.begin(), group.rewards.end(), 0.0) /
                          static_cast<double>(group.rewards.size());
      art.mean_reward.push_back(mean);
      history << json{{"iteration", step}, {"obs_id", x.obs_id}, {"mean_reward", mean}}.dump() << '\n';
    } catch (const BackendError& e) {
      throw BackendError("iteration " + std::to_string(step) + ": " + e.what(), e.status(), e.attempts());
    }
  }
  return art;
}

std::string EvaluationReport::to_table() const {
  std::ostringstream out;
  out << fmt::format("{:<24} {:<16} {:>5} {:>5}  {}\n", "task", "family", "n", "ok", "metrics");
  for (const auto& [task_id, t] : summary.at("tasks").items()) {
    std::string metrics;
    for (const auto& [name, value] : t.at("metrics").items()) {
      metrics += fmt::format("{}={:.4f} ", name, value.get<double>());
    }
    out << fmt::format("{:<24} {:<16} {:>5} {:>5}  {}\n", task_id, t.at("family").get<std::string>(),
                       t.at("count").get<std::size_t>(), t.at("ok").get<std::size_t>(), metrics);
  }
  out << fmt::format("observations={} ok={} complete={}\n", summary.at("observations").get<std::size_t>(),
                     summary.at("ok").get<std::size_t>(), complete ? "yes" : "no");
  return out.str();
}

EvaluationReport run_evaluation(const RunConfig& cfg, const Backends& backends, const TaskSet& split,
                                bool write) {
  ChatBackend& generator = require(backends.generator, "generator");
  ChatBackend& evaluator = require(backends.evaluator, "evaluator");
  const RoleBackendConfig& gen_cfg = role_config(cfg, "generator");
  const RoleBackendConfig& eval_cfg = role_config(cfg, "evaluator");

  EvaluationReport report;
  const auto observations = split.observations();
  report.observations.resize(observations.size());

  // Seeds derive from observation ids, so results do not depend on which
  // worker handles which observation.
  const auto evaluate_one = [&](std::size_t i) {
    const Observation& x = observations[i];
    ObservationResult& res = report.observations[i];
    res.obs_id = x.obs_id;
    res.task_id = x.task_id;
    try {
      const TaskSpec& task = split.task_of(x);
      CompletionRequest gen_req{render_generator_messages(task.base_prompt, render_observation(x)),
                                gen_cfg.temperature, cfg.mbr.n, gen_cfg.max_tokens, RoleTag::kGenerator,
                                derive_seed(cfg.seed, "eval-gen:" + x.obs_id)};
      for (const auto& o : backends.call(generator, gen_req)) {
        // No answer block: the base prompt stands in so every slot is scored.
        res.prompts.push_back(extract_prompt(parse_structured_output(o)).value_or(task.base_prompt));
      }
      for (std::size_t j = 0; j < res.prompts.size(); ++j) {
        CompletionRequest req{render_evaluator_messages(res.prompts[j], x), eval_cfg.temperature, 1,
                              eval_cfg.max_tokens, RoleTag::kEvaluator,
                              derive_seed(cfg.seed, "eval:" + x.obs_id + ":" + std::to_string(j))};
        res.answers.push_back(extract_evaluator_answer(backends.call(evaluator, req).front(), task));
      }
      res.selection = mbr_select({x.obs_id, res.answers, res.prompts}, regime_for(cfg, task.family));
      res.winner = res.answers[res.selection.index];
      res.metrics = metrics_for(res.winner, x, task, backends.executor.get());
      res.ok = true;
    } catch (const Error& e) {
      res.ok = false;
      res.error = e.what();
      spdlog::warn("evaluation of {} failed: {}", x.obs_id, e.what());
    }
  };

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < observations.size(); i = next++) evaluate_one(i);
  };
  const std::size_t threads = std::min(cfg.workers, std::max<std::size_t>(observations.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  json tasks = json::object();
  std::size_t ok = 0;
  std::map<std::string, std::map<std::string, double>> sums;
  for (const auto& r : report.observations) {
    const TaskSpec& task = split.task(r.task_id);
    json& t = tasks[r.task_id];
    if (t.is_null()) t = {{"family", to_string(task.family)}, {"count", 0}, {"ok", 0}, {"metrics", json::object()}};
    t["count"] = t["count"].get<std::size_t>() + 1;
    if (!r.ok) {
      report.complete = false;
      continue;
    }
    ++ok;
    t["ok"] = t["ok"].get<std::size_t>() + 1;
    for (const auto& [name, v] : r.metrics) sums[r.task_id][name] += v;
  }
  for (auto& [task_id, t] : tasks.items()) {
    const auto n = t["ok"].get<std::size_t>();
    for (const auto& [name, sum] : sums[task_id]) t["metrics"][name] = sum / static_cast<double>(n);
  }
  report.summary = {{"observations", observations.size()}, {"ok", ok}, {"complete", report.complete},
                    {"tasks", std::move(tasks)}};

  if (write) {
    auto out = open_output(cfg.output_dir / "report.json");
    out << report.summary.dump(2) << '\n';
    auto txt = open_output(cfg.output_dir / "report.txt");
    txt << report.to_table();
    auto preds = open_output(cfg.output_dir / "predictions.jsonl");
    for (const auto& r : report.observations) {
      json p = {{"obs_id", r.obs_id}, {"task_id", r.task_id}, {"ok", r.ok}};
      if (r.ok) {
        p["prompts"] = r.prompts;
        p["answers"] = r.answers;
        p["winner_index"] = r.selection.index;
        p["winner"] = r.winner;
        p["scores"] = r.selection.scores;
        p["tie"] = r.selection.tie;
        p["metrics"] = r.metrics;
      } else {
        p["error"] = r.error;
      }
      preds << p.dump() << '\n';
    }
  }
  return report;
}

bool literal_answer_leak(std::string_view prompt, std::string_view answer,
                         const std::vector<std::string>& labels) {
  const std::string text = lower(prompt);
  const std::string target = lower(trim(answer));
  const std::size_t hits = count_whole_word(text, target);
  if (hits == 0) return false;
  for (const auto& label : labels) {
    const std::string other = lower(trim(label));
    if (other == target) continue;
    if (count_whole_word(text, other) >= hits) return false;
  }
  return true;
}

json AuditReport::to_json() const {
  const auto rate = [](std::size_t k, std::size_t n) {
    return n == 0 ? json() : json(static_cast<double>(k) / static_cast<double>(n));
  };
  return {{"prompts", prompts},
          {"judge_checked", judge_checked},
          {"judge_flagged", judge_flagged},
          {"judge_leak_rate", rate(judge_flagged, judge_checked)},
          {"verdict_errors", verdict_errors},
          {"literal_checked", literal_checked},
          {"literal_flagged", literal_flagged},
          {"literal_leak_rate", rate(literal_flagged, literal_checked)},
          {"rows", rows}};
}

AuditReport judge_audit(const fs::path& prompts_path, ChatBackend* judge) {
  AuditReport report;
  std::size_t line = 0;
  for (const json& j : read_jsonl(prompts_path)) {
    ++line;
    if (!j.contains("prompt") || !j.at("prompt").is_string()) {
      throw ParseError("audit record needs a string 'prompt'", line);
    }
    const std::string prompt = j.at("prompt").get<std::string>();
    json row = {{"id", j.value("id", std::to_string(line))}};
    ++report.prompts;
    if (judge) {
      CompletionRequest req{judge_wrap(prompt), 0.0, 1, 16, RoleTag::kJudge, 0};
      try {
        const bool leak = parse_judge_verdict(complete(req, *judge).front());
        ++report.judge_checked;
        report.judge_flagged += leak;
        row["judge"] = leak;
      } catch (const VerdictParseError& e) {
        ++report.verdict_errors;
        row["judge"] = nullptr;
        row["verdict_error"] = e.what();
      }
    }
    if (j.contains("answer")) {
      std::vector<std::string> labels;
      if (j.contains("labels")) labels = j.at("labels").get<std::vector<std::string>>();
      const bool leak = literal_answer_leak(prompt, j.at("answer").get<std::string>(), labels);
      ++report.literal_checked;
      report.literal_flagged += leak;
      row["literal"] = leak;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

ScoreAudit audit_rollouts(const fs::path& rollouts_path) {
  ScoreAudit audit;
  double sum = 0.0;
  for (const json& j : read_jsonl(rollouts_path)) {
    const RolloutGroup g = RolloutGroup::from_json(j);
    ++audit.groups;
    for (std::size_t i = 0; i < g.rewards.size(); ++i) {
      ++audit.rollouts;
      sum += g.rewards[i];
      if (g.components.empty()) continue;
      const RewardBreakdown& b = g.components[i];
      if (std::abs(b.recomputed_total() - b.total) > 1e-9 || std::abs(b.total - g.rewards[i]) > 1e-9) {
        ++audit.mismatches;
      }
    }
  }
  audit.mean_reward = audit.rollouts == 0 ? 0.0 : sum / static_cast<double>(audit.rollouts);
  return audit;
}

std::size_t mbr_decode_file(const fs::path& in, std::ostream& out, MbrRegime regime) {
  std::size_t n = 0;
  for (const json& j : read_jsonl(in)) {
    ++n;
    CandidateSet set;
    try {
      set.obs_id = j.at("obs_id").get<std::string>();
      set.outputs = j.at("outputs").get<std::vector<std::string>>();
      if (j.contains("prompts")) set.prompts = j.at("prompts").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad candidate record: ") + e.what(), n);
    }
    if (set.outputs.empty()) throw ParseError("candidate record has no outputs", n);
    const Selection s = mbr_select(set, regime);
    out << json{{"obs_id", set.obs_id}, {"winner_index", s.index}, {"winner", set.outputs[s.index]},
                {"scores", s.scores}}
               .dump()
        << '\n';
  }
  return n;
}

}  // namespace perprompt

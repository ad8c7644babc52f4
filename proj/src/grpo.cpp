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

#include "perprompt/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "perprompt/errors.hpp"

namespace perprompt {

void GrpoConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ArgumentError("epsilon must lie in (0, 1)");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ArgumentError("beta must be >= 0");
  if (group_size < 2) throw ArgumentError("group_size must be at least 2");
  if (!(std_floor > 0.0)) throw ArgumentError("std_floor must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ArgumentError("learning_rate must be positive");
  }
  if (inner_epochs < 1) throw ArgumentError("inner_epochs must be at least 1");
}

std::vector<double> group_advantages(std::span<const double> rewards, double std_floor) {
  if (rewards.size() < 2) throw ArgumentError("group advantages need at least two rewards");
  if (!(std_floor >= 0.0)) throw ArgumentError("std_floor must be non-negative");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double denom = std::sqrt(var / n) + std_floor;
  std::vector<double> out(rewards.size(), 0.0);
  // A zero-variance group carries no signal; with std_floor = 0 this also
  // avoids 0/0.
  if (denom == 0.0) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / denom;
  return out;
}

double clipped_surrogate(double ratio, double advantage, double epsilon) {
  if (!(ratio > 0.0)) throw ArgumentError("probability ratio must be positive");
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

double kl_term(std::span<const double> p, std::span<const double> p_ref) {
  if (p.size() != p_ref.size()) throw ArgumentError("KL needs distributions of equal size");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (!(p_ref[i] > 0.0)) throw ArgumentError("KL reference has zero mass on the support");
    kl += p[i] * std::log(p[i] / p_ref[i]);
  }
  return std::max(kl, 0.0);
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ArgumentError("total variation needs equal sizes");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("softmax of an empty vector");
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += out[i] = std::exp(logits[i] - hi);
  for (double& v : out) v /= z;
  return out;
}

ToyPolicy::ToyPolicy(std::size_t contexts, std::size_t actions)
    : contexts_(contexts), actions_(actions), logits_(contexts * actions, 0.0) {
  if (contexts == 0 || actions == 0) throw ArgumentError("toy policy needs contexts and actions");
}

std::span<const double> ToyPolicy::logits(std::size_t context) const {
  return std::span<const double>(logits_).subspan(context * actions_, actions_);
}

std::span<double> ToyPolicy::logits(std::size_t context) {
  return std::span<double>(logits_).subspan(context * actions_, actions_);
}

std::vector<double> ToyPolicy::probabilities(std::size_t context) const {
  return softmax(logits(context));
}

std::size_t ToyPolicy::argmax(std::size_t context) const {
  const auto l = logits(context);
  return static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
}

std::size_t ToyPolicy::sample(std::size_t context, Rng& rng) const {
  const auto p = probabilities(context);
  return rng.categorical(p);
}

namespace {

void check_batch(std::span<const double> logits, std::span<const double> ref_probs,
                 const SurrogateBatch& batch) {
  if (ref_probs.size() != logits.size()) throw ArgumentError("reference size mismatch");
  if (batch.actions.empty() || batch.actions.size() != batch.advantages.size() ||
      batch.actions.size() != batch.old_probs.size()) {
    throw ArgumentError("surrogate batch arrays must be non-empty and aligned");
  }
  for (std::size_t a : batch.actions) {
    if (a >= logits.size()) throw ArgumentError("surrogate batch action out of range");
  }
}

}  // namespace

double surrogate_objective(std::span<const double> logits, std::span<const double> ref_probs,
                           const SurrogateBatch& batch, double epsilon, double beta) {
  check_batch(logits, ref_probs, batch);
  const auto p = softmax(logits);
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.actions.size(); ++i) {
    const double ratio = p[batch.actions[i]] / batch.old_probs[i];
    sum += clipped_surrogate(ratio, batch.advantages[i], epsilon);
  }
  return sum / static_cast<double>(batch.actions.size()) - beta * kl_term(p, ref_probs);
}

std::vector<double> surrogate_gradient(std::span<const double> logits,
                                       std::span<const double> ref_probs,
                                       const SurrogateBatch& batch, double epsilon, double beta) {
  check_batch(logits, ref_probs, batch);
  const auto p = softmax(logits);
  const std::size_t m = logits.size();
  const double n = static_cast<double>(batch.actions.size());
  std::vector<double> grad(m, 0.0);

  for (std::size_t i = 0; i < batch.actions.size(); ++i) {
    const std::size_t a = batch.actions[i];
    const double adv = batch.advantages[i];
    const double ratio = p[a] / batch.old_probs[i];
    const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
    // Outside the band the clipped branch is constant; it wins the min
    // exactly when it is the smaller of the two.
    if (clipped != ratio && clipped * adv < ratio * adv) continue;
    // d rho / d logit_k = rho (1[k = a] - p_k)
    for (std::size_t k = 0; k < m; ++k) {
      grad[k] += adv * ratio * ((k == a ? 1.0 : 0.0) - p[k]) / n;
    }
  }

  if (beta != 0.0) {
    const double kl = kl_term(p, ref_probs);
    for (std::size_t k = 0; k < m; ++k) {
      if (p[k] == 0.0) continue;
      grad[k] -= beta * p[k] * (std::log(p[k] / ref_probs[k]) - kl);
    }
  }
  return grad;
}

void ScriptedEnv::validate() const {
  if (contexts == 0 || actions == 0) throw ArgumentError("env needs contexts and actions");
  if (mean.size() != contexts * actions) throw ArgumentError("env mean table has the wrong size");
  for (double m : mean) {
    if (!std::isfinite(m)) throw ArgumentError("env means must be finite");
    if (noise == RewardNoise::kBernoulli && (m < 0.0 || m > 1.0)) {
      throw ArgumentError("Bernoulli env means must lie in [0, 1]");
    }
  }
  if (!(noise_stddev >= 0.0)) throw ArgumentError("noise_stddev must be >= 0");
  if (!task_of_context.empty() && task_of_context.size() != contexts) {
    throw ArgumentError("task_of_context needs one entry per context");
  }
  if (!leaky.empty() && leaky.size() != contexts * actions) {
    throw ArgumentError("leaky table has the wrong size");
  }
}

double ScriptedEnv::draw(std::size_t context, std::size_t action, Rng& rng) const {
  const double m = mean_reward(context, action);
  switch (noise) {
    case RewardNoise::kNone:
      return m;
    case RewardNoise::kBernoulli:
      return rng.uniform01() < m ? 1.0 : 0.0;
    case RewardNoise::kGaussian:
      return m + noise_stddev * rng.normal();
  }
  return m;
}

std::size_t ScriptedEnv::best_action(std::size_t context) const {
  std::size_t best = 0;
  for (std::size_t a = 1; a < actions; ++a) {
    if (mean_reward(context, a) > mean_reward(context, best)) best = a;
  }
  return best;
}

ToyTrainResult toy_train(const ScriptedEnv& env, const GrpoConfig& cfg, std::uint64_t seed,
                         const ToyRewardFn& reward) {
  cfg.validate();
  env.validate();
  Rng rng(seed);
  Rng sampling = rng.fork("sampling");
  Rng rewards_rng = rng.fork("reward");

  ToyTrainResult result{ToyPolicy(env.contexts, env.actions), ToyPolicy(env.contexts, env.actions),
                        {}, {}};
  result.mean_reward.reserve(cfg.iterations);
  result.contexts.reserve(cfg.iterations);

  std::vector<std::vector<double>> ref(env.contexts);
  for (std::size_t c = 0; c < env.contexts; ++c) ref[c] = result.initial.probabilities(c);

  std::vector<double> r(cfg.group_size);
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const std::size_t c = sampling.uniform_index(env.contexts);
    const auto old = result.policy.probabilities(c);
    SurrogateBatch batch;
    for (std::size_t i = 0; i < cfg.group_size; ++i) {
      const std::size_t a = sampling.categorical(old);
      batch.actions.push_back(a);
      batch.old_probs.push_back(old[a]);
      r[i] = reward ? reward(c, a, rewards_rng) : env.draw(c, a, rewards_rng);
    }
    batch.advantages = group_advantages(r, cfg.std_floor);
    for (std::size_t e = 0; e < cfg.inner_epochs; ++e) {
      auto logits = result.policy.logits(c);
      const auto g = surrogate_gradient(logits, ref[c], batch, cfg.epsilon, cfg.beta);
      for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += cfg.learning_rate * g[k];
    }
    result.contexts.push_back(c);
    result.mean_reward.push_back(std::accumulate(r.begin(), r.end(), 0.0) /
                                 static_cast<double>(r.size()));
  }
  return result;
}

nlohmann::json RolloutGroup::to_json() const {
  nlohmann::json prompts_json = nlohmann::json::array();
  for (const auto& p : prompts) prompts_json.push_back(p ? nlohmann::json(*p) : nlohmann::json());
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& b : components) {
    comps.push_back({{"r_token", b.r_token},
                     {"r_structure", b.r_structure},
                     {"r_format", b.r_format},
                     {"r_alignment", b.r_alignment},
                     {"penalty", b.penalty},
                     {"total", b.total}});
  }
  return {{"obs_id", obs_id},     {"step", step},         {"outputs", outputs},
          {"prompts", prompts_json}, {"components", comps}, {"rewards", rewards},
          {"advantages", advantages}};
}

RolloutGroup RolloutGroup::from_json(const nlohmann::json& j) {
  RolloutGroup g;
  try {
    g.obs_id = j.at("obs_id").get<std::string>();
    g.step = j.at("step").get<std::size_t>();
    if (j.contains("outputs")) g.outputs = j.at("outputs").get<std::vector<std::string>>();
    for (const auto& p : j.at("prompts")) {
      g.prompts.push_back(p.is_null() ? std::nullopt : std::optional<std::string>(p.get<std::string>()));
    }
    if (j.contains("components")) {
      for (const auto& c : j.at("components")) {
        RewardBreakdown b;
        b.r_token = c.at("r_token").get<double>();
        b.r_structure = c.at("r_structure").get<double>();
        b.r_format = c.at("r_format").get<double>();
        b.r_alignment = c.at("r_alignment").get<double>();
        b.penalty = c.at("penalty").get<double>();
        b.total = c.at("total").get<double>();
        g.components.push_back(b);
      }
    }
    g.rewards = j.at("rewards").get<std::vector<double>>();
    g.advantages = j.at("advantages").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad rollout record: ") + e.what());
  }
  const std::size_t n = g.rewards.size();
  if (n < 2 || g.advantages.size() != n || g.prompts.size() != n ||
      (!g.outputs.empty() && g.outputs.size() != n) ||
      (!g.components.empty() && g.components.size() != n)) {
    throw ParseError("rollout record arrays must share one length of at least 2");
  }
  return g;
}

}  // namespace perprompt

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
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "perprompt/reward.hpp"
#include "perprompt/rng.hpp"

namespace perprompt {

struct GrpoConfig {
  double epsilon = 0.2;
  double beta = 0.04;
  std::size_t group_size = 8;
  double std_floor = 1e-8;
  double learning_rate = 0.1;
  std::size_t iterations = 1000;
  // Gradient steps taken on each sampled group.
  std::size_t inner_epochs = 1;

  void validate() const;
};

// (r_i - mean) / (population std + std_floor). Needs at least two rewards.
std::vector<double> group_advantages(std::span<const double> rewards, double std_floor);

// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A); ratio must be > 0.
double clipped_surrogate(double ratio, double advantage, double epsilon);

// KL(p || p_ref) in nats. Terms with p = 0 contribute 0.
double kl_term(std::span<const double> p, std::span<const double> p_ref);

double total_variation(std::span<const double> p, std::span<const double> q);

std::vector<double> softmax(std::span<const double> logits);

// Tabular softmax policy over `actions` prompt templates per context.
class ToyPolicy {
 public:
  ToyPolicy(std::size_t contexts, std::size_t actions);

  std::size_t contexts() const { return contexts_; }
  std::size_t actions() const { return actions_; }
  std::span<const double> logits(std::size_t context) const;
  std::span<double> logits(std::size_t context);
  std::vector<double> probabilities(std::size_t context) const;
  std::size_t argmax(std::size_t context) const;
  std::size_t sample(std::size_t context, Rng& rng) const;

 private:
  std::size_t contexts_;
  std::size_t actions_;
  std::vector<double> logits_;
};

// One group's data for the per-context objective.
struct SurrogateBatch {
  std::vector<std::size_t> actions;
  std::vector<double> advantages;
  std::vector<double> old_probs;  // pi_old(a_i | context)
};

// (1/n) sum_i min(rho_i A_i, clip(rho_i) A_i) - beta KL(pi || pi_ref), for
// one context's logits.
double surrogate_objective(std::span<const double> logits, std::span<const double> ref_probs,
                           const SurrogateBatch& batch, double epsilon, double beta);
// Analytic gradient of surrogate_objective with respect to the logits.
std::vector<double> surrogate_gradient(std::span<const double> logits,
                                       std::span<const double> ref_probs,
                                       const SurrogateBatch& batch, double epsilon, double beta);

enum class RewardNoise { kNone, kBernoulli, kGaussian };

// Contextual bandit standing in for the evaluator: reward distribution per
// (context, template).
struct ScriptedEnv {
  std::size_t contexts = 1;
  std::size_t actions = 2;
  std::vector<double> mean;  // contexts x actions, row-major
  RewardNoise noise = RewardNoise::kNone;
  double noise_stddev = 0.0;
  // Optional grouping of contexts into tasks (sample regularization swaps
  // within a task) and templates a judge would flag as leaking.
  std::vector<std::size_t> task_of_context;
  std::vector<bool> leaky;  // contexts x actions

  void validate() const;
  double mean_reward(std::size_t context, std::size_t action) const {
    return mean[context * actions + action];
  }
  double draw(std::size_t context, std::size_t action, Rng& rng) const;
  bool is_leaky(std::size_t context, std::size_t action) const {
    return !leaky.empty() && leaky[context * actions + action];
  }
  std::size_t best_action(std::size_t context) const;
};

using ToyRewardFn = std::function<double(std::size_t context, std::size_t action, Rng& rng)>;

struct ToyTrainResult {
  ToyPolicy policy;
  ToyPolicy initial;
  std::vector<double> mean_reward;     // per iteration
  std::vector<std::size_t> contexts;   // context sampled per iteration
};

// Runs cfg.iterations GRPO steps on a uniform-initialised tabular policy,
// with beta * KL toward that initial policy. `reward` overrides env.draw
// (used to plug in regularization). Bit-reproducible for a fixed seed.
ToyTrainResult toy_train(const ScriptedEnv& env, const GrpoConfig& cfg, std::uint64_t seed,
                         const ToyRewardFn& reward = {});

// A scored group as exported for external trainers (rollouts_scored.jsonl).
struct RolloutGroup {
  std::string obs_id;
  std::size_t step = 0;
  std::vector<std::string> outputs;
  std::vector<std::optional<std::string>> prompts;
  std::vector<RewardBreakdown> components;
  std::vector<double> rewards;
  std::vector<double> advantages;

  nlohmann::json to_json() const;
  static RolloutGroup from_json(const nlohmann::json& j);
};

}  // namespace perprompt

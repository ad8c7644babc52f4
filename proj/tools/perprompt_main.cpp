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

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "perprompt/errors.hpp"
#include "perprompt/pipeline.hpp"

namespace {

using namespace perprompt;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kBackend = 3 };

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) return kUsage;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ReferenceError*>(&e) ||
      dynamic_cast<const StateError*>(&e)) {
    return kData;
  }
  if (dynamic_cast<const BackendError*>(&e) || dynamic_cast<const ProtocolError*>(&e) ||
      dynamic_cast<const ExecutionError*>(&e) || dynamic_cast<const VerdictParseError*>(&e)) {
    return kBackend;
  }
  return kData;
}

RunConfig load_config(const std::string& path, const std::optional<std::string>& out_dir) {
  RunConfig cfg = RunConfig::load(path);
  if (out_dir) cfg.output_dir = *out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("perprompt"));

  CLI::App app{"Per-observation prompt generation harness"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  std::string config;
  std::string in;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::size_t iters = 0;
  std::string regime = "agreement";
  std::string split;

  auto* train = app.add_subcommand("train-toy", "GRPO on the config's tabular bandit");
  train->add_option("--config", config)->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "overrides the config seed");
  train->add_option("--out", out, "overrides output_dir");

  auto* rollout = app.add_subcommand("rollout", "collect scored rollouts from the configured backends");
  rollout->add_option("--config", config)->required()->check(CLI::ExistingFile);
  rollout->add_option("--iters", iters)->required()->check(CLI::PositiveNumber);
  rollout->add_option("--out", out, "overrides output_dir");

  auto* score = app.add_subcommand("score", "re-derive exported totals from their components");
  score->add_option("--in", in)->required()->check(CLI::ExistingFile);

  auto* mbr = app.add_subcommand("mbr-decode", "select one output per candidate set");
  mbr->add_option("--in", in)->required()->check(CLI::ExistingFile);
  mbr->add_option("--regime", regime)->check(CLI::IsMember({"agreement", "consensus"}));
  mbr->add_option("--out", out, "write here instead of stdout");

  auto* evaluate = app.add_subcommand("evaluate", "generate, answer, MBR-select and score a split");
  evaluate->add_option("--config", config)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--split", split)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", out, "overrides output_dir");

  auto* audit = app.add_subcommand("judge-audit", "leak audit of a prompts file");
  audit->add_option("--in", in)->required()->check(CLI::ExistingFile);
  audit->add_option("--config", config, "config whose judge backend to use")->check(CLI::ExistingFile);
  audit->add_option("--out", out, "write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*train) {
      RunConfig cfg = load_config(config, out);
      if (seed) cfg.seed = *seed;
      const auto art = run_toy_training(cfg);
      std::cout << "history: " << art.history.string() << "\npolicy: " << art.policy->string() << '\n';
    } else if (*rollout) {
      const RunConfig cfg = load_config(config, out);
      const auto art = run_rollout_collection(cfg, Backends::from_config(cfg), iters);
      std::cout << "rollouts: " << art.rollouts->string() << '\n';
    } else if (*score) {
      const ScoreAudit a = audit_rollouts(in);
      std::cout << nlohmann::json{{"groups", a.groups},
                                  {"rollouts", a.rollouts},
                                  {"mismatches", a.mismatches},
                                  {"mean_reward", a.mean_reward}}
                       .dump()
                << '\n';
      if (a.mismatches > 0) return kData;
    } else if (*mbr) {
      if (out) {
        std::ofstream f(*out, std::ios::binary | std::ios::trunc);
        if (!f) throw StateError("cannot write " + *out);
        mbr_decode_file(in, f, parse_mbr_regime(regime));
      } else {
        mbr_decode_file(in, std::cout, parse_mbr_regime(regime));
      }
    } else if (*evaluate) {
      const RunConfig cfg = load_config(config, out);
      const TaskSet set = load_tasks(split);
      const auto report = run_evaluation(cfg, Backends::from_config(cfg), set);
      std::cout << report.to_table();
      if (!report.complete) return kData;
    } else if (*audit) {
      std::shared_ptr<ChatBackend> judge;
      if (!config.empty()) judge = Backends::from_config(RunConfig::load(config)).judge;
      const auto report = judge_audit(in, judge.get()).to_json().dump(2);
      if (out) {
        std::ofstream f(*out, std::ios::binary | std::ios::trunc);
        f << report << '\n';
      } else {
        std::cout << report << '\n';
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e);
  }
  return kOk;
}

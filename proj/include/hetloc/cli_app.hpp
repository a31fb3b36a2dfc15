/*
 * Copyright 2026 The HetLoc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <CLI11.hpp>

#include "hetloc/cli.hpp"

namespace hetloc::cli {

// Argument surface is deliberately small: every run is fully described by
// one JSON config; --seed overrides the config seed for quick sweeps.
inline int run(std::vector<std::string> args) {
  CLI::App app{"hetloc: radar-to-lidar place recognition and pose tracking "
               "on synthetic worlds"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::int64_t seed_override = -1;
  bool have_seed = false;

  struct Verb {
    const char* name;
    const char* help;
    int (*fn)(const Json&, const fs::path&);
  };
  static const Verb verbs[] = {
      {"simulate", "generate a synthetic multi-session dataset", cmd_simulate},
      {"train-pr", "train the place-recognition descriptor encoder",
       cmd_train_pr},
      {"train-pt", "train the pose-tracking siamese U-Net", cmd_train_pt},
      {"eval-pr", "evaluate recall@1 against the Scan Context baseline",
       cmd_eval_pr},
      {"eval-pt", "run radar-on-lidar pose tracking and report RMSE",
       cmd_eval_pt},
      {"report", "merge evaluation reports into one summary", cmd_report},
  };
  for (const auto& verb : verbs) {
    auto* sub = app.add_subcommand(verb.name, verb.help);
    sub->add_option("--config", config_path, "JSON run configuration")
        ->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { have_seed = true; });
  }

  std::vector<const char*> argv;
  argv.push_back("hetloc");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    Json config = load_config(config_path);
    if (have_seed) {
      config["seed"] = seed_override;
      if (config.contains("training") && config["training"].is_object())
        config["training"]["seed"] = seed_override;
    }
    for (const auto& verb : verbs)
      if (app.got_subcommand(verb.name)) return verb.fn(config, out_dir);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitConfig;
  } catch (const tracking::TrackingLostError& e) {
    std::fprintf(stderr, "tracking lost: %s\n", e.what());
    return kExitTrackingLost;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace hetloc::cli

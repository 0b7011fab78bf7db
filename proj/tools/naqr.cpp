// Copyright 2026 The naqr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "naqr/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace naqr;
  CLI::App app{"naqr: neutral-atom qubit readout with threshold masks and CNN classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool allow_nontest = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
  };
  auto* simulate = app.add_subcommand("simulate", "write primary/secondary frame sets and truth labels per exposure");
  auto* train = app.add_subcommand("train", "train cnn-site and/or cnn-array and save the best checkpoints");
  auto* evaluate = app.add_subcommand("evaluate", "score methods on the test split and write reports");
  auto* sweep = app.add_subcommand("sweep", "train and evaluate every method at every exposure");
  for (auto* s : {simulate, train, evaluate, sweep}) add_common(s);
  evaluate->add_flag("--allow-nontest-eval", allow_nontest, "permit evaluate.split other than test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kValidation;
  }

  try {
    auto cfg = config_path.empty() ? cli::RunConfig{} : cli::load_run_config(config_path);
    if (seed) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    cfg.apply_seed();
    if (simulate->parsed()) {
      cli::cmd_simulate(cfg, std::cout);
    } else if (train->parsed()) {
      cli::cmd_train(cfg, std::cout);
    } else if (evaluate->parsed()) {
      cli::cmd_evaluate(cfg, allow_nontest, std::cout);
    } else {
      cli::cmd_sweep(cfg, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "naqr: error: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return cli::kOk;
}

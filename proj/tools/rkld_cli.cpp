// SPDX-License-Identifier: Apache-2.0
// Command-line front end: rkld <synth|train|unlearn|eval|report|run> [options]
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "rkld/errors.hpp"
#include "rkld/workbench/pipeline.hpp"

namespace {

void set_log_level() {
  const char* level = std::getenv("RKLD_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
  spdlog::set_pattern("[%H:%M:%S] %v");
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level();
  CLI::App app{"RKLD unlearning workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds;
  std::string stage = "all";
  bool print_config = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON); defaults apply when omitted");
    sub->add_option("--out", out_dir, "directory that holds run directories")->capture_default_str();
    sub->add_option("--seed", seeds, "run only these seeds instead of the configured list");
  };

  std::vector<std::pair<CLI::App*, rkld::wb::Stage>> stage_cmds;
  for (auto s : rkld::wb::kAllStages) {
    auto* sub = app.add_subcommand(rkld::wb::stage_name(s), std::string("run the ") + rkld::wb::stage_name(s) + " stage");
    add_common(sub);
    stage_cmds.emplace_back(sub, s);
  }
  auto* run = app.add_subcommand("run", "run one stage or the whole pipeline");
  add_common(run);
  run->add_option("--stage", stage, "stage name or 'all'")->capture_default_str();
  auto* show = app.add_subcommand("config", "print the effective config");
  add_common(show);
  show->callback([&] { print_config = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = config_path.empty() ? rkld::wb::default_config() : rkld::wb::load_config(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    if (print_config) {
      std::cout << rkld::wb::to_json(cfg);
      return 0;
    }
    rkld::wb::Pipeline pipeline(cfg, out_dir);
    for (auto& [sub, s] : stage_cmds) {
      if (sub->parsed()) pipeline.run_stage(s);
    }
    if (run->parsed()) {
      if (stage == "all") {
        pipeline.run_all();
      } else {
        pipeline.run_stage(rkld::wb::stage_from_name(stage));
      }
    }
    spdlog::info("artifacts in {}", pipeline.root().string());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rkld/eval/evalsuite.hpp"
#include "rkld/workbench/checkpoint.hpp"
#include "rkld/workbench/config.hpp"

namespace rkld::wb {

namespace fs = std::filesystem;

enum class Stage { kSynth, kTrain, kUnlearn, kEval, kReport };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);
inline constexpr Stage kAllStages[] = {Stage::kSynth, Stage::kTrain, Stage::kUnlearn, Stage::kEval,
                                       Stage::kReport};

/// 1-based index of the first maximum.
std::size_t select_peak(std::span<const double> forget_quality);

// Per-method result for one seed, as stored in eval/<label>/run.json.
struct UnlearnRun {
  unlearn::UnlearnMethodSpec spec;
  std::vector<std::string> checkpoints;  // paths relative to the seed directory
  std::vector<eval::EvalReport> reports;
  std::vector<double> epoch_losses;
  std::size_t peak_epoch = 1;
};

// Field-wise mean of reports.
eval::EvalReport mean_report(std::span<const eval::EvalReport> reports);

/// Run directory layout under <out>/<name>:
///   config.json, report.csv, report.json
///   seed_<n>/corpus.json, seed_<n>/ckpt/..., seed_<n>/eval/...
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, const fs::path& out_dir);

  const ExperimentConfig& config() const { return cfg_; }
  const fs::path& root() const { return root_; }
  fs::path seed_dir(std::uint64_t seed) const;

  void run_all();
  void run_stage(Stage stage);

  void synth(std::uint64_t seed);
  void train(std::uint64_t seed);
  void unlearn(std::uint64_t seed);
  void evaluate(std::uint64_t seed);
  void report();

 private:
  fs::path require(const fs::path& artifact, Stage needed_by) const;
  bool up_to_date(const fs::path& stamp) const;
  void mark_done(const fs::path& stamp) const;
  std::string stamp_text() const;

  ExperimentConfig cfg_;
  fs::path root_;
};

// Small file helpers shared by the CLI and tests.
std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& text);

}  // namespace rkld::wb

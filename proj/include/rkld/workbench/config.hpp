// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rkld/eval/evalsuite.hpp"
#include "rkld/tinylm/model.hpp"
#include "rkld/trainer/trainer.hpp"
#include "rkld/unlearn/unlearners.hpp"

namespace rkld::wb {

struct CorpusParams {
  std::uint64_t seed = 0;  // base; each run seed is added to it
  int n_persons = 40;
  int qa_per_person = 10;
  int forget_pct = 10;
};

struct ExperimentConfig {
  std::string name = "default";
  CorpusParams corpus;
  lm::LMConfig model;  // vocab_size is filled from the corpus vocabulary
  train::TrainConfig train;
  // Continued training on s_forget that produces the strengthened model.
  std::size_t strengthen_epochs = 5;
  double strengthen_lr = 0;  // 0 reuses train.lr
  std::vector<unlearn::UnlearnMethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  eval::EvalOptions eval;
};

/// Toy-scale defaults: 40 persons x 10 QA, Forget10, five seeds, RKLD plus the
/// baselines with and without retain regularization.
ExperimentConfig default_config();

/// Throws ContractError on duplicate seeds, invalid percentages or invalid
/// method specs.
void validate(const ExperimentConfig& cfg);

std::string to_json(const ExperimentConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
ExperimentConfig config_from_json(const std::string& text);

ExperimentConfig load_config(const std::string& path);

}  // namespace rkld::wb

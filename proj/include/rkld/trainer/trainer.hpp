// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rkld/corpus/synthetic_tofu.hpp"
#include "rkld/tinylm/model.hpp"

namespace rkld::train {

using corpus::TrainPair;
using lm::LanguageModel;
using nd::Tensor;

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::size_t warmup_epochs = 1;  // linear warmup length; linear decay to 0 afterwards
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;  // max global L2 norm
};

void validate(const TrainConfig& cfg);

// AdamW moments, mirrored per parameter tensor.
struct OptState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

inline constexpr double kBeta1 = 0.9;
inline constexpr double kBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One AdamW update with decoupled weight decay and bias correction. Parameters
/// without a gradient buffer are treated as having zero gradient. Throws
/// NumericError naming the parameter when a gradient is not finite.
void adamw_step(std::vector<lm::NamedTensor>& params, OptState& state, const TrainConfig& cfg,
                double lr_now);

/// Linear 0 -> lr over warmup_steps, then linear lr -> 0 at total_steps.
double lr_at(const TrainConfig& cfg, std::size_t global_step, std::size_t total_steps,
             std::size_t warmup_steps);

/// Scales all gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::vector<lm::NamedTensor>& params, double max_norm);

/// Batch loss plus the weight it carries in the epoch mean (e.g. token count).
struct BatchLoss {
  Tensor loss;
  double weight = 1.0;
};

/// Builds the scalar objective for a batch, given indices into the caller's
/// example list. `step` is the global optimizer step about to be taken.
using BatchObjective = std::function<BatchLoss(const LanguageModel& model,
                                               std::span<const std::size_t> batch,
                                               std::size_t step)>;

/// Called after each epoch with the 1-based epoch number.
using EpochHook = std::function<void(std::size_t epoch, const LanguageModel& model)>;

/// Seeded shuffled mini-batching with one AdamW step per batch under the
/// warmup/decay schedule. Returns the weighted mean loss of every epoch.
std::vector<double> train(LanguageModel& model, std::size_t n_examples, const TrainConfig& cfg,
                          const BatchObjective& objective, const EpochHook& hook = {});

/// Mean target-token negative log-likelihood over the selected pairs.
BatchLoss batch_nll(const LanguageModel& model, std::span<const TrainPair> pairs,
                    std::span<const std::size_t> batch);

/// Cross-entropy training on (x, y) pairs; loss is masked to y.
std::vector<double> train(LanguageModel& model, std::span<const TrainPair> pairs,
                          const TrainConfig& cfg);

// Training procedures. Each returns a fresh model; inputs are not modified.

/// Fits a freshly initialized model on the base corpus (s, held-out persons and
/// world facts): base training and finetuning collapsed into one pass.
LanguageModel finetune(const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer,
                       const lm::LMConfig& lm_cfg, const TrainConfig& cfg);

/// Same as finetune but with s_forget removed: the reference model.
LanguageModel retrain(const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer,
                      const lm::LMConfig& lm_cfg, const TrainConfig& cfg);

/// Continues training a copy of the original model on s_forget only.
LanguageModel continued_train(const LanguageModel& original, const corpus::CorpusBundle& bundle,
                              const lm::Tokenizer& tokenizer, const TrainConfig& cfg);

}  // namespace rkld::train

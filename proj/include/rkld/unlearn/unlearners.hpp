// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rkld/corpus/synthetic_tofu.hpp"
#include "rkld/tinylm/model.hpp"
#include "rkld/trainer/trainer.hpp"

namespace rkld::unlearn {

using lm::LanguageModel;
using nd::real;
using nd::Tensor;
using train::TrainPair;

/// l_ori - alpha * relu(l_str - l_ori), elementwise and outside the tape.
/// Throws DimensionError on shape mismatch and ContractError for alpha < 0.
Tensor build_teacher_logits(const Tensor& l_ori, const Tensor& l_str, real alpha);

struct LogitsTriple {
  Tensor l_ori;
  Tensor l_str;
  Tensor l_tea;
  real alpha = 0;
};

LogitsTriple make_triple(const Tensor& l_ori, const Tensor& l_str, real alpha);

enum class Role { kTeacher, kStudent, kOriginal };

// A single probability row over the vocabulary.
struct Distribution {
  std::vector<double> probs;
  Role role = Role::kStudent;
};

/// Throws ContractError unless entries are >= 0 and sum to 1 within 1e-6.
void validate(const Distribution& d);

inline constexpr double kProbFloor = 1e-12;

/// sum_v tea * ln(tea / max(stu, floor)), with 0 * ln(0 / q) = 0.
double fkl_loss(const Distribution& teacher, const Distribution& student);
/// sum_v stu * ln(stu / max(tea, floor)), with 0 * ln(0 / q) = 0.
double rkl_loss(const Distribution& teacher, const Distribution& student);

// Tensor forms over [T x V] probability rows, averaged over the T positions.
// The teacher is a constant; gradients flow into the student only.
Tensor fkl_loss(const Tensor& teacher_probs, const Tensor& student_probs);
Tensor rkl_loss(const Tensor& teacher_probs, const Tensor& student_probs);

/// Negated mean target-token NLL over the batch.
Tensor ga_loss(const LanguageModel& student, std::span<const TrainPair> batch);

/// Mean target-token NLL over the batch.
Tensor rt_loss(const LanguageModel& student, std::span<const TrainPair> batch);

/// Sequence-level log pi(y | x), summed over target tokens.
Tensor sequence_logprob(const LanguageModel& model, const TrainPair& pair);

/// Mean over the batch of (2 / beta) * ln(1 + exp(beta * r)) with
/// r = log pi_student(y|x) - log pi_ref(y|x). ref_logprobs holds the frozen
/// reference's sequence log-probabilities, aligned with batch.
Tensor npo_loss(const LanguageModel& student, std::span<const TrainPair> batch,
                std::span<const double> ref_logprobs, double beta);

/// Mean over answer positions of KL(pi_student || pi_original).
Tensor kl_retain_loss(const LanguageModel& student, const LanguageModel& original,
                      std::span<const TrainPair> batch);

/// Forget questions paired with the refusal templates, cycled in order.
std::vector<TrainPair> idk_pairs(const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer);

/// theta_ori - lambda * (theta_str - theta_ori).
LanguageModel task_arithmetic(const LanguageModel& original, const LanguageModel& strengthened,
                              double lambda);

enum class Method { kRKLD, kFKLD, kGA, kIDK, kNPO, kTA };
enum class RetainMode { kNone, kRT, kKL };

const char* method_name(Method m);
Method method_from_name(const std::string& name);
const char* retain_mode_name(RetainMode m);
RetainMode retain_mode_from_name(const std::string& name);

struct UnlearnMethodSpec {
  Method method = Method::kRKLD;
  double alpha = 8.0;
  double beta = 0.1;
  double ta_lambda = 1.0;
  RetainMode retain_mode = RetainMode::kNone;
  double retain_weight = 1.0;
  std::size_t epochs = 10;
  // Optimizer settings for the unlearning loop. Unset grad_clip resolves to
  // 1.0 for GA and NPO and to no clipping otherwise.
  double lr = 1e-3;
  std::size_t batch_size = 4;
  std::size_t warmup_epochs = 1;
  double weight_decay = 0.01;
  std::optional<double> grad_clip;

  // "rkld", "ga+rt", ...
  std::string label() const;
};

/// Throws ContractError for out-of-range fields and for TA combined with a
/// retain regularizer.
void validate(const UnlearnMethodSpec& spec);

train::TrainConfig unlearn_train_config(const UnlearnMethodSpec& spec, std::uint64_t seed);

struct UnlearnResult {
  UnlearnMethodSpec spec;
  std::vector<LanguageModel> checkpoints;  // one per epoch; a single one for TA
  std::vector<double> epoch_losses;
};

/// Runs one unlearning method from the original model. The strengthened model
/// is required by RKLD, FKLD and TA and ignored otherwise.
UnlearnResult run_unlearn(const LanguageModel& original, const LanguageModel* strengthened,
                          const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer,
                          const UnlearnMethodSpec& spec, std::uint64_t seed);

}  // namespace rkld::unlearn

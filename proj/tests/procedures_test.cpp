// SPDX-License-Identifier: Apache-2.0
// Checks that need trained models. The models are fitted once, at the default
// toy scale, and shared by every test in this file.
#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "rkld/eval/evalsuite.hpp"
#include "rkld/trainer/trainer.hpp"
#include "rkld/unlearn/unlearners.hpp"
#include "rkld/workbench/config.hpp"

using namespace rkld;

namespace {

struct Models {
  corpus::CorpusBundle bundle = corpus::generate_corpus(1);
  lm::Tokenizer tok = bundle.make_tokenizer();
  wb::ExperimentConfig cfg = wb::default_config();
  std::unique_ptr<lm::LanguageModel> original, retrained, strengthened;

  Models() {
    lm::LMConfig lc = cfg.model;
    lc.vocab_size = tok.vocab_size();
    lc.seed = 1;
    train::TrainConfig tc = cfg.train;
    tc.seed = 1;
    original = std::make_unique<lm::LanguageModel>(train::finetune(bundle, tok, lc, tc));
    retrained = std::make_unique<lm::LanguageModel>(train::retrain(bundle, tok, lc, tc));
    tc.epochs = cfg.strengthen_epochs;
    strengthened = std::make_unique<lm::LanguageModel>(train::continued_train(*original, bundle, tok, tc));
  }
};

class Procedures : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { models_ = new Models(); }
  static void TearDownTestSuite() {
    delete models_;
    models_ = nullptr;
  }
  static Models* models_;
  const Models& m() const { return *models_; }
};

Models* Procedures::models_ = nullptr;

double mean_answer_prob(const lm::LanguageModel& model, const lm::Tokenizer& tok,
                        const std::vector<corpus::QAItem>& items) {
  double s = 0;
  for (const auto& it : items) s += eval::norm_answer_prob(model, tok, it.question, it.answer);
  return s / double(items.size());
}

double mean_answer_logprob(const lm::LanguageModel& model, const lm::Tokenizer& tok,
                           const std::vector<corpus::QAItem>& items) {
  double s = 0;
  for (const auto& it : items) s += std::log(eval::norm_answer_prob(model, tok, it.question, it.answer));
  return s / double(items.size());
}

}  // namespace

TEST_F(Procedures, OriginalMemorizesRetainSet) {
  double rouge = 0;
  for (const auto& it : m().bundle.s_retain) {
    rouge += eval::rouge_l(eval::greedy_answer(*m().original, m().tok, it.question), it.answer);
  }
  EXPECT_GE(rouge / double(m().bundle.s_retain.size()), 0.9);
}

TEST_F(Procedures, RetrainedModelIsNearChanceOnForgetValues) {
  // The frame words are shared with retain answers, so compare the attribute
  // slot: the retrained model should put about as much mass on the golden
  // value as on the perturbed ones, far below the original model.
  double golden = 0, wrong = 0;
  for (const auto& it : m().bundle.s_forget) {
    golden += eval::norm_answer_prob(*m().retrained, m().tok, it.question, it.paraphrased_answer);
    for (const auto& p : it.perturbed_answers) {
      wrong += eval::norm_answer_prob(*m().retrained, m().tok, it.question, p) /
               double(it.perturbed_answers.size());
    }
  }
  EXPECT_LT(golden / wrong, 2.0);
  EXPECT_LT(mean_answer_prob(*m().retrained, m().tok, m().bundle.s_forget),
            0.2 * mean_answer_prob(*m().original, m().tok, m().bundle.s_forget));
}

TEST_F(Procedures, StrengthenedModelRaisesForgetLikelihood) {
  EXPECT_GE(mean_answer_logprob(*m().strengthened, m().tok, m().bundle.s_forget),
            mean_answer_logprob(*m().original, m().tok, m().bundle.s_forget));
}

TEST_F(Procedures, MemorizedAnswersHaveHighNormalizedProbability) {
  EXPECT_GT(mean_answer_prob(*m().original, m().tok, m().bundle.s_retain), 0.9);
}

TEST_F(Procedures, RetrainedTruthRatiosCenterNearOne) {
  const auto r = eval::truth_ratios(*m().retrained, m().tok, m().bundle.s_forget);
  double log_mean = 0;
  for (const auto& s : r) log_mean += std::log(s.r_truth) / double(r.size());
  EXPECT_LT(std::abs(log_mean), std::log(3.0));
}

TEST_F(Procedures, OriginalFailsForgetQuality) {
  const auto ref = eval::truth_ratios(*m().retrained, m().tok, m().bundle.s_forget);
  const auto ori = eval::truth_ratios(*m().original, m().tok, m().bundle.s_forget);
  EXPECT_LT(eval::forget_quality(ori, ref), eval::kSignificance);
  EXPECT_EQ(eval::forget_quality(ref, ref), 1.0);
}

TEST_F(Procedures, OriginalLeaksGoldenValues) {
  EXPECT_GE(eval::leakage_rate(*m().original, m().tok, m().bundle.s_forget), 0.8);
}

TEST_F(Procedures, RkldLowersForgetProbability) {
  auto spec = m().cfg.methods.front();
  ASSERT_EQ(spec.method, unlearn::Method::kRKLD);
  const auto result = unlearn::run_unlearn(*m().original, m().strengthened.get(), m().bundle, m().tok, spec, 1);
  ASSERT_EQ(result.checkpoints.size(), 10u);
  EXPECT_LT(mean_answer_prob(result.checkpoints.back(), m().tok, m().bundle.s_forget),
            mean_answer_prob(*m().original, m().tok, m().bundle.s_forget));
}

TEST_F(Procedures, IdkAnswersForgetQuestionsWithRefusals) {
  unlearn::UnlearnMethodSpec spec;
  for (const auto& s : m().cfg.methods) {
    if (s.method == unlearn::Method::kIDK) spec = s;
  }
  ASSERT_EQ(spec.method, unlearn::Method::kIDK);
  const auto result = unlearn::run_unlearn(*m().original, nullptr, m().bundle, m().tok, spec, 1);
  const auto& model = result.checkpoints.back();
  std::size_t refusals = 0;
  for (const auto& it : m().bundle.s_forget) {
    const auto answer = eval::greedy_answer(model, m().tok, it.question);
    const auto& t = m().bundle.idk_templates;
    const bool refused = std::find(t.begin(), t.end(), answer) != t.end();
    refusals += refused;
    if (!refused) ADD_FAILURE() << it.question << " -> " << answer;
  }
  EXPECT_EQ(refusals, m().bundle.s_forget.size());
}

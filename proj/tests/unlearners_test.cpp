// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "rkld/errors.hpp"
#include "rkld/unlearn/unlearners.hpp"
#include "rkld/util/rng.hpp"

using namespace rkld;
using namespace rkld::unlearn;
using nd::Tensor;

namespace {

lm::LMConfig tiny(std::size_t vocab, std::uint64_t seed = 5) {
  lm::LMConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ctx_len = 40;
  cfg.seed = seed;
  return cfg;
}

Distribution dist(std::vector<double> p, Role r) { return {std::move(p), r}; }

struct Small {
  corpus::CorpusBundle bundle = corpus::generate_corpus(1, 10, 4, 10);
  lm::Tokenizer tok = bundle.make_tokenizer();
  lm::LanguageModel model{tiny(tok.vocab_size())};
};

}  // namespace

TEST(TeacherLogits, WorkedExamples) {
  const Tensor ori({3}, {2, 1, 0});
  const Tensor str({3}, {5, 1, -1});
  const auto a1 = build_teacher_logits(ori, str, 1);
  EXPECT_EQ(a1[0], -1.0f);
  EXPECT_EQ(a1[1], 1.0f);
  EXPECT_EQ(a1[2], 0.0f);
  const auto a8 = build_teacher_logits(ori, str, 8);
  EXPECT_EQ(a8[0], -22.0f);
  EXPECT_EQ(a8[1], 1.0f);
  EXPECT_EQ(a8[2], 0.0f);
  const auto same = build_teacher_logits(ori, ori, 5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(same[i], ori[i]);
}

TEST(TeacherLogits, Contract) {
  EXPECT_THROW(build_teacher_logits(Tensor({2}, {0, 0}), Tensor({3}, {0, 0, 0}), 1), DimensionError);
  EXPECT_THROW(build_teacher_logits(Tensor({2}, {0, 0}), Tensor({2}, {0, 0}), -1), ContractError);
  const auto t = make_triple(Tensor({2}, {1, 2}), Tensor({2}, {3, 0}), 2);
  EXPECT_EQ(t.l_tea[0], -3.0f);
  EXPECT_EQ(t.l_tea[1], 2.0f);
}

TEST(TeacherLogits, NoGradientThroughTeacher) {
  Tensor ori({2}, {1, 2}, true);
  const auto tea = build_teacher_logits(ori, Tensor({2}, {3, 0}), 1);
  EXPECT_FALSE(tea.requires_grad());
}

TEST(Divergence, Examples) {
  const auto half = dist({0.5, 0.5}, Role::kTeacher);
  const auto skew = dist({0.25, 0.75}, Role::kStudent);
  EXPECT_EQ(fkl_loss(half, dist({0.5, 0.5}, Role::kStudent)), 0.0);
  EXPECT_EQ(rkl_loss(half, dist({0.5, 0.5}, Role::kStudent)), 0.0);
  EXPECT_NEAR(fkl_loss(half, skew), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(fkl_loss(half, skew), 0.1438, 1e-4);
  EXPECT_NEAR(rkl_loss(half, skew), 0.25 * std::log(0.5) + 0.75 * std::log(1.5), 1e-12);
  EXPECT_NEAR(rkl_loss(half, skew), 0.1308, 1e-4);
  EXPECT_NE(fkl_loss(half, skew), rkl_loss(half, skew));
  EXPECT_NEAR(fkl_loss(dist({1, 0}, Role::kTeacher), dist({0.5, 0.5}, Role::kStudent)), std::log(2.0),
              1e-12);
}

TEST(Divergence, ModeSeekingWitness) {
  const auto teacher = dist({0.5, 0.5, 0.0}, Role::kTeacher);
  const auto student = dist({0.0, 0.0, 1.0}, Role::kStudent);
  EXPECT_GT(rkl_loss(teacher, student), fkl_loss(teacher, student));
}

TEST(Divergence, ValidateRejectsBadRows) {
  EXPECT_THROW(validate(dist({0.5, 0.6}, Role::kStudent)), ContractError);
  EXPECT_THROW(validate(dist({-0.1, 1.1}, Role::kStudent)), ContractError);
  EXPECT_NO_THROW(validate(dist({0.2, 0.8}, Role::kStudent)));
  EXPECT_THROW(fkl_loss(dist({1.0}, Role::kTeacher), dist({0.5, 0.5}, Role::kStudent)), DimensionError);
}

TEST(Divergence, TensorFormsMatchScalarForms) {
  const Tensor tea({2, 2}, {0.5f, 0.5f, 0.9f, 0.1f});
  const Tensor stu({2, 2}, {0.25f, 0.75f, 0.3f, 0.7f});
  const double f = (fkl_loss(dist({0.5, 0.5}, Role::kTeacher), dist({0.25, 0.75}, Role::kStudent)) +
                    fkl_loss(dist({0.9, 0.1}, Role::kTeacher), dist({0.3, 0.7}, Role::kStudent))) /
                   2;
  const double r = (rkl_loss(dist({0.5, 0.5}, Role::kTeacher), dist({0.25, 0.75}, Role::kStudent)) +
                    rkl_loss(dist({0.9, 0.1}, Role::kTeacher), dist({0.3, 0.7}, Role::kStudent))) /
                   2;
  EXPECT_NEAR(fkl_loss(tea, stu).item(), f, 1e-6);
  EXPECT_NEAR(rkl_loss(tea, stu).item(), r, 1e-6);
}

TEST(GaLoss, UniformStudentOverFourTokens) {
  lm::LanguageModel model(tiny(4));
  for (auto& p : model.parameters()) {
    for (auto& v : p.value.mutable_data()) v = 0;
  }
  const std::vector<TrainPair> batch = {{{1, 3}, {2, 0, 3}}};
  EXPECT_NEAR(rt_loss(model, batch).item(), std::log(4.0), 1e-6);
  EXPECT_NEAR(ga_loss(model, batch).item(), -std::log(4.0), 1e-6);
  EXPECT_NEAR(ga_loss(model, batch).item(), -1.386, 1e-3);
}

TEST(RtLoss, EqualsTrainerCrossEntropy) {
  Small s;
  const auto pairs = corpus::render_training_sequences(s.bundle, s.tok, corpus::Which::kRetain);
  const std::vector<TrainPair> batch(pairs.begin(), pairs.begin() + 3);
  const std::vector<std::size_t> idx = {0, 1, 2};
  EXPECT_EQ(rt_loss(s.model, batch).item(), train::batch_nll(s.model, pairs, idx).loss.item());
}

TEST(GaLoss, StepLowersForgetLogprob) {
  Small s;
  const auto forget = corpus::render_training_sequences(s.bundle, s.tok, corpus::Which::kForget);
  const std::vector<TrainPair> one = {forget[0]};
  const double before = sequence_logprob(s.model, one[0]).item();
  s.model.zero_grad();
  nd::backward(ga_loss(s.model, one));
  for (auto& p : s.model.parameters()) {
    auto d = p.value.mutable_data();
    const auto g = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] -= 1e-3f * g[i];
  }
  EXPECT_LT(sequence_logprob(s.model, one[0]).item(), before);
}

TEST(NpoLoss, Examples) {
  Small s;
  const auto forget = corpus::render_training_sequences(s.bundle, s.tok, corpus::Which::kForget);
  const std::vector<TrainPair> one = {forget[0]};
  const double lp = sequence_logprob(s.model, one[0]).item();
  const std::vector<double> same = {lp};
  EXPECT_NEAR(npo_loss(s.model, one, same, 0.1).item(), 2 / 0.1 * std::log(2.0), 1e-4);
  EXPECT_NEAR(npo_loss(s.model, one, same, 0.1).item(), 13.8629, 1e-3);

  const std::vector<double> far = {lp + 1e4};
  EXPECT_LT(npo_loss(s.model, one, far, 0.1).item(), 1e-6);

  const std::vector<double> minus_one = {lp + 1};
  EXPECT_LT(npo_loss(s.model, one, minus_one, 0.1).item(), npo_loss(s.model, one, same, 0.1).item());
  EXPECT_THROW(npo_loss(s.model, one, same, 0), ContractError);
}

TEST(KlRetainLoss, Examples) {
  Small s;
  const auto retain = corpus::render_training_sequences(s.bundle, s.tok, corpus::Which::kRetain);
  const std::vector<TrainPair> batch(retain.begin(), retain.begin() + 2);
  EXPECT_EQ(kl_retain_loss(s.model, s.model, batch).item(), 0.0f);

  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    lm::LanguageModel other(tiny(s.tok.vocab_size(), 100 + std::uint64_t(trial)));
    EXPECT_GE(kl_retain_loss(other, s.model, batch).item(), 0.0f);
  }
  lm::LanguageModel bumped(s.model);
  auto& out_w = bumped.parameters().back().value;
  out_w.mutable_data()[rng.below(out_w.numel())] += 1.0f;
  EXPECT_GT(kl_retain_loss(bumped, s.model, batch).item(), 0.0f);
}

TEST(IdkPairs, CountAndTargets) {
  Small s;
  const auto pairs = idk_pairs(s.bundle, s.tok);
  EXPECT_EQ(pairs.size(), s.bundle.s_forget.size());
  const auto before = corpus::to_json(s.bundle);
  (void)idk_pairs(s.bundle, s.tok);
  EXPECT_EQ(corpus::to_json(s.bundle), before);
}

TEST(TaskArithmetic, Examples) {
  Small s;
  lm::LanguageModel str(tiny(s.tok.vocab_size(), 99));
  const auto zero = task_arithmetic(s.model, str, 0);
  const auto self = task_arithmetic(s.model, s.model, 1);
  for (std::size_t i = 0; i < s.model.parameters().size(); ++i) {
    const auto o = s.model.parameters()[i].value.data();
    for (std::size_t j = 0; j < o.size(); ++j) {
      ASSERT_EQ(zero.parameters()[i].value[j], o[j]);
      ASSERT_EQ(self.parameters()[i].value[j], o[j]);
    }
  }
  lm::LanguageModel ori(s.model), st(s.model);
  ori.parameters()[0].value.mutable_data()[0] = 1.0f;
  st.parameters()[0].value.mutable_data()[0] = 1.5f;
  EXPECT_FLOAT_EQ(task_arithmetic(ori, st, 1).parameters()[0].value[0], 0.5f);
}

TEST(MethodSpec, LabelsAndValidation) {
  UnlearnMethodSpec spec;
  EXPECT_EQ(spec.label(), "rkld");
  spec.retain_mode = RetainMode::kKL;
  EXPECT_EQ(spec.label(), "rkld+kl");
  spec.method = Method::kTA;
  EXPECT_THROW(validate(spec), ContractError);
  for (auto m : {Method::kRKLD, Method::kFKLD, Method::kGA, Method::kIDK, Method::kNPO, Method::kTA}) {
    EXPECT_EQ(method_from_name(method_name(m)), m);
  }
  EXPECT_THROW(method_from_name("sgd"), ContractError);
}

TEST(RunUnlearn, GaWithZeroLrKeepsOriginal) {
  Small s;
  UnlearnMethodSpec spec;
  spec.method = Method::kGA;
  spec.lr = 0;
  spec.weight_decay = 0;
  spec.epochs = 3;
  const auto result = run_unlearn(s.model, nullptr, s.bundle, s.tok, spec, 1);
  ASSERT_EQ(result.checkpoints.size(), 3u);
  for (const auto& ck : result.checkpoints) {
    for (std::size_t i = 0; i < ck.parameters().size(); ++i) {
      const auto a = ck.parameters()[i].value.data();
      const auto b = s.model.parameters()[i].value.data();
      ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
}

TEST(RunUnlearn, TaskArithmeticSingleCheckpoint) {
  Small s;
  lm::LanguageModel str(tiny(s.tok.vocab_size(), 99));
  UnlearnMethodSpec spec;
  spec.method = Method::kTA;
  const auto result = run_unlearn(s.model, &str, s.bundle, s.tok, spec, 1);
  EXPECT_EQ(result.checkpoints.size(), 1u);
}

TEST(RunUnlearn, DistillationNeedsStrengthenedModel) {
  Small s;
  UnlearnMethodSpec spec;
  EXPECT_THROW(run_unlearn(s.model, nullptr, s.bundle, s.tok, spec, 1), ContractError);
}

// Teacher construction exactness over fuzzed triples, in 32-bit arithmetic.
TEST(TeacherLogits, FuzzInvariants) {
  Rng rng(17);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<float> o(n), st(n);
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = float(rng.normal(0, 5));
      st[i] = rng.below(4) == 0 ? o[i] : float(rng.normal(0, 5));
    }
    const float alpha = float(rng.uniform() * 10);
    const auto tea = build_teacher_logits(Tensor({n}, o), Tensor({n}, st), alpha);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_LE(tea[i], o[i]);
      if (st[i] <= o[i]) {
        ASSERT_EQ(tea[i], o[i]);
      }
    }
  }
}

// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "rkld/errors.hpp"
#include "rkld/trainer/trainer.hpp"

using namespace rkld;
using train::TrainConfig;

namespace {

std::vector<lm::NamedTensor> scalar_param(float value, float grad) {
  nd::Tensor t({1}, {value}, true);
  if (grad != 0) {
    nd::backward(nd::sum(nd::scale(t, grad)));
  }
  return {{"w", t}};
}

lm::LMConfig tiny(std::size_t vocab) {
  lm::LMConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ctx_len = 40;
  cfg.seed = 3;
  return cfg;
}

std::vector<corpus::TrainPair> one_pair(const lm::Tokenizer& tok) {
  return {corpus::render_pair(tok, "where was ann born ?", "ann was born in oslo")};
}

lm::Tokenizer tokenizer() { return lm::Tokenizer({"where", "was", "ann", "born", "?", "in", "oslo"}); }

}  // namespace

TEST(AdamW, ZeroGradNoDecayLeavesParams) {
  auto params = scalar_param(1.0f, 0);
  train::OptState st;
  TrainConfig cfg;
  cfg.weight_decay = 0;
  train::adamw_step(params, st, cfg, 1e-3);
  EXPECT_EQ(params[0].value[0], 1.0f);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, BiasCorrectedFirstStep) {
  auto params = scalar_param(1.0f, 0.1f);
  train::OptState st;
  TrainConfig cfg;
  cfg.weight_decay = 0;
  train::adamw_step(params, st, cfg, 1e-3);
  // m_hat = 0.1, v_hat = 0.01: update = lr * 0.1 / (0.1 + eps)
  const double expected = 1.0 - 1e-3 * 0.1 / (0.1 + train::kAdamEps);
  EXPECT_NEAR(params[0].value[0], expected, 1e-7);
  EXPECT_NEAR(params[0].value[0], 0.9990, 1e-6);
  ASSERT_EQ(st.m.size(), 1u);
  EXPECT_EQ(st.m[0].size(), 1u);
}

TEST(AdamW, DecoupledDecayOnly) {
  auto params = scalar_param(1.0f, 0);
  train::OptState st;
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  train::adamw_step(params, st, cfg, 1e-3);
  EXPECT_NEAR(params[0].value[0], 0.99999, 1e-7);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  auto params = scalar_param(1.0f, 0);
  nd::backward(nd::sum(nd::scale(params[0].value, std::numeric_limits<float>::infinity())));
  train::OptState st;
  try {
    train::adamw_step(params, st, TrainConfig{}, 1e-3);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
}

TEST(LrAt, Schedule) {
  TrainConfig cfg;
  cfg.lr = 0.5;
  EXPECT_EQ(train::lr_at(cfg, 0, 100, 10), 0.0);
  EXPECT_EQ(train::lr_at(cfg, 5, 100, 10), 0.25);
  EXPECT_EQ(train::lr_at(cfg, 10, 100, 10), 0.5);
  EXPECT_EQ(train::lr_at(cfg, 55, 100, 10), 0.25);
  EXPECT_EQ(train::lr_at(cfg, 100, 100, 10), 0.0);
  EXPECT_THROW(train::lr_at(cfg, 0, 10, 10), ContractError);
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  nd::Tensor t({2}, {0, 0}, true);
  nd::backward(nd::sum(nd::mul(t, nd::Tensor({2}, {3, 4}))));
  std::vector<lm::NamedTensor> params = {{"t", t}};
  EXPECT_DOUBLE_EQ(train::clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(t.grad()[0], 0.6, 1e-6);
  EXPECT_NEAR(t.grad()[1], 0.8, 1e-6);
}

TEST(Train, OverfitsSingleExample) {
  const auto tok = tokenizer();
  lm::LanguageModel model(tiny(tok.vocab_size()));
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.warmup_epochs = 0;
  const auto losses = train::train(model, one_pair(tok), cfg);
  ASSERT_EQ(losses.size(), 200u);
  EXPECT_LT(losses.back(), 0.05);
}

TEST(Train, ZeroLrKeepsLossConstant) {
  const auto tok = tokenizer();
  lm::LanguageModel model(tiny(tok.vocab_size()));
  TrainConfig cfg;
  cfg.lr = 0;
  cfg.epochs = 4;
  cfg.batch_size = 1;
  const auto losses = train::train(model, one_pair(tok), cfg);
  for (double l : losses) EXPECT_EQ(l, losses.front());
}

TEST(Train, SameSeedSameLosses) {
  const auto b = corpus::generate_corpus(1, 10, 4, 10);
  const auto tok = b.make_tokenizer();
  const auto pairs = corpus::render_training_sequences(b, tok, corpus::Which::kPretrain);
  auto run = [&] {
    lm::LanguageModel model(tiny(tok.vocab_size()));
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 42;
    return train::train(model, pairs, cfg);
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, InvalidConfig) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train::validate(cfg), ContractError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(train::validate(cfg), ContractError);
}

// SPDX-License-Identifier: Apache-2.0
#include "rkld/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rkld/errors.hpp"
#include "rkld/util/rng.hpp"

namespace rkld::train {

using nd::real;

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0)) throw ContractError("lr must be non-negative");
  if (cfg.epochs < 1) throw ContractError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (cfg.grad_clip && !(*cfg.grad_clip > 0)) throw ContractError("grad_clip must be positive");
}

void adamw_step(std::vector<lm::NamedTensor>& params, OptState& state, const TrainConfig& cfg,
                double lr_now) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match parameters");

  for (const auto& p : params) {
    for (real g : p.value.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }

  ++state.step;
  const double t = double(state.step);
  const double bc1 = 1.0 - std::pow(kBeta1, t);
  const double bc2 = 1.0 - std::pow(kBeta2, t);
  const double decay = 1.0 - lr_now * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].value;
    auto theta = tensor.mutable_data();
    const auto grad = tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad.empty() ? 0.0 : double(grad[j]);
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double w = double(theta[j]) * decay;
      theta[j] = static_cast<real>(w - lr_now * m_hat / (std::sqrt(v_hat) + kAdamEps));
    }
  }
}

double lr_at(const TrainConfig& cfg, std::size_t global_step, std::size_t total_steps,
             std::size_t warmup_steps) {
  if (total_steps <= warmup_steps) throw ContractError("total_steps must exceed warmup_steps");
  if (global_step < warmup_steps) return cfg.lr * double(global_step) / double(warmup_steps);
  if (global_step >= total_steps) return 0.0;
  return cfg.lr * double(total_steps - global_step) / double(total_steps - warmup_steps);
}

double clip_grad_norm(std::vector<lm::NamedTensor>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (real g : p.value.grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / (norm + 1e-12);
    for (auto& p : params) {
      // Grad buffers are owned by the leaf node; rescale in place.
      auto& g = p.value.node()->grad;
      for (auto& x : g) x = static_cast<real>(double(x) * f);
    }
  }
  return norm;
}

std::vector<double> train(LanguageModel& model, std::size_t n_examples, const TrainConfig& cfg,
                          const BatchObjective& objective, const EpochHook& hook) {
  validate(cfg);
  if (n_examples == 0) throw ContractError("train needs at least one example");
  const std::size_t per_epoch = (n_examples + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  std::size_t warmup = per_epoch * std::min(cfg.warmup_epochs, cfg.epochs);
  if (warmup >= total) warmup = 0;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), std::size_t(0));
  OptState state;
  std::vector<double> epoch_losses;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0, weight_sum = 0;
    for (std::size_t start = 0; start < n_examples; start += cfg.batch_size) {
      const std::size_t end = std::min(n_examples, start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      model.zero_grad();
      BatchLoss bl = objective(model, batch, step);
      const double value = bl.loss.item();
      if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step));
      nd::backward(bl.loss);
      if (cfg.grad_clip) clip_grad_norm(model.parameters(), *cfg.grad_clip);
      adamw_step(model.parameters(), state, cfg, lr_at(cfg, step, total, warmup));
      loss_sum += value * bl.weight;
      weight_sum += bl.weight;
      ++step;
    }
    epoch_losses.push_back(weight_sum > 0 ? loss_sum / weight_sum : 0.0);
    if (hook) hook(epoch, model);
  }
  model.zero_grad();
  return epoch_losses;
}

BatchLoss batch_nll(const LanguageModel& model, std::span<const TrainPair> pairs,
                    std::span<const std::size_t> batch) {
  std::size_t tokens = 0;
  for (auto i : batch) tokens += pairs[i].y.size();
  Tensor total;
  bool first = true;
  for (auto i : batch) {
    const auto& pair = pairs[i];
    Tensor logp = nd::log_softmax(lm::target_logits(model, pair.x, pair.y));
    Tensor nll = nd::scale(nd::sum(nd::pick(logp, pair.y)), real(-1.0 / double(tokens)));
    total = first ? nll : nd::add(total, nll);
    first = false;
  }
  return {total, double(tokens)};
}

std::vector<double> train(LanguageModel& model, std::span<const TrainPair> pairs,
                          const TrainConfig& cfg) {
  return train(model, pairs.size(), cfg,
               [pairs](const LanguageModel& m, std::span<const std::size_t> batch, std::size_t) {
                 return batch_nll(m, pairs, batch);
               });
}

namespace {

std::vector<TrainPair> base_pairs(const corpus::CorpusBundle& bundle, const lm::Tokenizer& tok,
                                  bool include_forget) {
  std::vector<TrainPair> out;
  for (const auto& it : bundle.pretrain_items()) {
    if (!include_forget && it.split == corpus::Split::kForget) continue;
    out.push_back(corpus::render_pair(tok, it.question, it.answer));
  }
  return out;
}

}  // namespace

LanguageModel finetune(const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer,
                       const lm::LMConfig& lm_cfg, const TrainConfig& cfg) {
  LanguageModel model(lm_cfg);
  const auto pairs = base_pairs(bundle, tokenizer, true);
  train(model, pairs, cfg);
  return model;
}

LanguageModel retrain(const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer,
                      const lm::LMConfig& lm_cfg, const TrainConfig& cfg) {
  LanguageModel model(lm_cfg);
  const auto pairs = base_pairs(bundle, tokenizer, false);
  train(model, pairs, cfg);
  return model;
}

LanguageModel continued_train(const LanguageModel& original, const corpus::CorpusBundle& bundle,
                              const lm::Tokenizer& tokenizer, const TrainConfig& cfg) {
  LanguageModel model(original);
  const auto pairs = corpus::render_training_sequences(bundle, tokenizer, corpus::Which::kForget);
  train(model, pairs, cfg);
  return model;
}

}  // namespace rkld::train

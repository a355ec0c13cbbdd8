// SPDX-License-Identifier: Apache-2.0
#include "rkld/unlearn/unlearners.hpp"

#include <cmath>
#include <numeric>

#include "rkld/errors.hpp"
#include "rkld/util/rng.hpp"

namespace rkld::unlearn {

Tensor build_teacher_logits(const Tensor& l_ori, const Tensor& l_str, real alpha) {
  if (l_ori.shape() != l_str.shape()) {
    throw DimensionError("teacher logits need equal shapes, got " + nd::shape_str(l_ori.shape()) +
                         " and " + nd::shape_str(l_str.shape()));
  }
  if (!(alpha >= 0)) throw ContractError("alpha must be non-negative");
  const auto o = l_ori.data();
  const auto s = l_str.data();
  std::vector<real> out(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) {
    const real diff = s[i] - o[i];
    const real lift = diff > real(0) ? diff : real(0);
    out[i] = o[i] - alpha * lift;
  }
  return Tensor(l_ori.shape(), std::move(out));
}

LogitsTriple make_triple(const Tensor& l_ori, const Tensor& l_str, real alpha) {
  return {l_ori, l_str, build_teacher_logits(l_ori, l_str, alpha), alpha};
}

void validate(const Distribution& d) {
  double total = 0;
  for (double p : d.probs) {
    if (!(p >= 0)) throw ContractError("distribution has a negative or NaN entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ContractError("distribution does not sum to 1");
}

namespace {

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("distributions have different sizes");
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0) continue;
    acc += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbFloor)));
  }
  return acc;
}

Tensor mean_rows(const Tensor& total, std::size_t rows) {
  return nd::scale(total, real(1.0 / double(rows)));
}

Tensor accumulate(const Tensor& acc, const Tensor& term, bool first) {
  return first ? term : nd::add(acc, term);
}

}  // namespace

double fkl_loss(const Distribution& teacher, const Distribution& student) {
  return kl(teacher.probs, student.probs);
}

double rkl_loss(const Distribution& teacher, const Distribution& student) {
  return kl(student.probs, teacher.probs);
}

Tensor fkl_loss(const Tensor& teacher_probs, const Tensor& student_probs) {
  return mean_rows(nd::kl_div_rows(teacher_probs.detach(), student_probs, real(kProbFloor)),
                   student_probs.rows());
}

Tensor rkl_loss(const Tensor& teacher_probs, const Tensor& student_probs) {
  return mean_rows(nd::kl_div_rows(student_probs, teacher_probs.detach(), real(kProbFloor)),
                   student_probs.rows());
}

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  return idx;
}

}  // namespace

Tensor rt_loss(const LanguageModel& student, std::span<const TrainPair> batch) {
  const auto idx = all_indices(batch.size());
  return train::batch_nll(student, batch, idx).loss;
}

Tensor ga_loss(const LanguageModel& student, std::span<const TrainPair> batch) {
  return nd::scale(rt_loss(student, batch), real(-1));
}

Tensor sequence_logprob(const LanguageModel& model, const TrainPair& pair) {
  const Tensor logp = nd::log_softmax(lm::target_logits(model, pair.x, pair.y));
  return nd::sum(nd::pick(logp, pair.y));
}

Tensor npo_loss(const LanguageModel& student, std::span<const TrainPair> batch,
                std::span<const double> ref_logprobs, double beta) {
  if (!(beta > 0)) throw ContractError("npo beta must be positive");
  if (ref_logprobs.size() != batch.size()) throw DimensionError("npo reference size mismatch");
  Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor ratio = nd::add_scalar(sequence_logprob(student, batch[i]), real(-ref_logprobs[i]));
    Tensor term = nd::softplus(nd::scale(ratio, real(beta)));
    total = accumulate(total, term, i == 0);
  }
  return nd::scale(total, real(2.0 / beta / double(batch.size())));
}

Tensor kl_retain_loss(const LanguageModel& student, const LanguageModel& original,
                      std::span<const TrainPair> batch) {
  std::size_t positions = 0;
  Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor ref;
    {
      nd::NoGradGuard no_grad;
      ref = nd::softmax(lm::target_logits(original, batch[i].x, batch[i].y));
    }
    Tensor p = nd::softmax(lm::target_logits(student, batch[i].x, batch[i].y));
    total = accumulate(total, nd::kl_div_rows(p, ref, real(kProbFloor)), i == 0);
    positions += batch[i].y.size();
  }
  return mean_rows(total, positions);
}

std::vector<TrainPair> idk_pairs(const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer) {
  return corpus::render_training_sequences(bundle, tokenizer, corpus::Which::kIdk);
}

LanguageModel task_arithmetic(const LanguageModel& original, const LanguageModel& strengthened,
                              double lambda) {
  return lm::param_axpy(original, strengthened, -lambda);
}

const char* method_name(Method m) {
  switch (m) {
    case Method::kRKLD: return "rkld";
    case Method::kFKLD: return "fkld";
    case Method::kGA: return "ga";
    case Method::kIDK: return "idk";
    case Method::kNPO: return "npo";
    case Method::kTA: return "ta";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::kRKLD, Method::kFKLD, Method::kGA, Method::kIDK, Method::kNPO, Method::kTA}) {
    if (name == method_name(m)) return m;
  }
  throw ContractError("unknown unlearning method '" + name + "'");
}

const char* retain_mode_name(RetainMode m) {
  switch (m) {
    case RetainMode::kNone: return "none";
    case RetainMode::kRT: return "rt";
    case RetainMode::kKL: return "kl";
  }
  return "?";
}

RetainMode retain_mode_from_name(const std::string& name) {
  for (RetainMode m : {RetainMode::kNone, RetainMode::kRT, RetainMode::kKL}) {
    if (name == retain_mode_name(m)) return m;
  }
  throw ContractError("unknown retain mode '" + name + "'");
}

std::string UnlearnMethodSpec::label() const {
  std::string out = method_name(method);
  if (retain_mode != RetainMode::kNone) out += std::string("+") + retain_mode_name(retain_mode);
  return out;
}

void validate(const UnlearnMethodSpec& spec) {
  if (!(spec.alpha >= 0)) throw ContractError("alpha must be non-negative");
  if (!(spec.beta > 0)) throw ContractError("beta must be positive");
  if (!(spec.retain_weight >= 0)) throw ContractError("retain_weight must be non-negative");
  if (spec.epochs < 1) throw ContractError("epochs must be >= 1");
  if (spec.method == Method::kTA && spec.retain_mode != RetainMode::kNone) {
    throw ContractError("task arithmetic cannot be combined with a retain regularizer");
  }
}

train::TrainConfig unlearn_train_config(const UnlearnMethodSpec& spec, std::uint64_t seed) {
  train::TrainConfig cfg;
  cfg.lr = spec.lr;
  cfg.weight_decay = spec.weight_decay;
  cfg.batch_size = spec.batch_size;
  cfg.epochs = spec.epochs;
  cfg.warmup_epochs = spec.warmup_epochs;
  cfg.seed = seed;
  cfg.grad_clip = spec.grad_clip;
  if (!cfg.grad_clip && (spec.method == Method::kGA || spec.method == Method::kNPO)) {
    cfg.grad_clip = 1.0;
  }
  return cfg;
}

namespace {

std::vector<TrainPair> select(std::span<const TrainPair> pairs, std::span<const std::size_t> idx) {
  std::vector<TrainPair> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pairs[i]);
  return out;
}

}  // namespace

UnlearnResult run_unlearn(const LanguageModel& original, const LanguageModel* strengthened,
                          const corpus::CorpusBundle& bundle, const lm::Tokenizer& tokenizer,
                          const UnlearnMethodSpec& spec, std::uint64_t seed) {
  validate(spec);
  const bool needs_strengthened =
      spec.method == Method::kRKLD || spec.method == Method::kFKLD || spec.method == Method::kTA;
  if (needs_strengthened && strengthened == nullptr) {
    throw ContractError(std::string(method_name(spec.method)) + " needs a strengthened model");
  }
  if (strengthened && !lm::same_architecture(strengthened->config(), original.config())) {
    throw CompatibilityError("original and strengthened models have different configs");
  }

  UnlearnResult result;
  result.spec = spec;
  if (spec.method == Method::kTA) {
    result.checkpoints.push_back(task_arithmetic(original, *strengthened, spec.ta_lambda));
    return result;
  }

  const auto forget = spec.method == Method::kIDK
                          ? idk_pairs(bundle, tokenizer)
                          : corpus::render_training_sequences(bundle, tokenizer, corpus::Which::kForget);
  const auto retain = corpus::render_training_sequences(bundle, tokenizer, corpus::Which::kRetain);

  // Frozen per-example quantities from the original and strengthened models.
  std::vector<Tensor> l_ori, l_str;
  std::vector<double> ref_logprob;
  {
    nd::NoGradGuard no_grad;
    for (const auto& pair : forget) {
      if (needs_strengthened) {
        l_ori.push_back(lm::target_logits(original, pair.x, pair.y));
        l_str.push_back(lm::target_logits(*strengthened, pair.x, pair.y));
      }
      if (spec.method == Method::kNPO) ref_logprob.push_back(sequence_logprob(original, pair).item());
    }
  }

  // Retain batches are walked round-robin through a seeded permutation.
  std::vector<std::size_t> retain_order = all_indices(retain.size());
  Rng rng(seed ^ 0x5eed5eedULL);
  rng.shuffle(retain_order);

  const train::TrainConfig cfg = unlearn_train_config(spec, seed);
  LanguageModel student(original);
  const real alpha = real(spec.alpha);

  auto objective = [&](const LanguageModel& m, std::span<const std::size_t> idx,
                       std::size_t step) -> train::BatchLoss {
    Tensor loss;
    std::size_t positions = 0;
    for (auto i : idx) positions += forget[i].y.size();
    switch (spec.method) {
      case Method::kRKLD:
      case Method::kFKLD: {
        Tensor total;
        bool first = true;
        for (auto i : idx) {
          const Tensor teacher = nd::softmax(build_teacher_logits(l_ori[i], l_str[i], alpha));
          const Tensor student_p = nd::softmax(lm::target_logits(m, forget[i].x, forget[i].y));
          const Tensor term = spec.method == Method::kRKLD
                                  ? nd::kl_div_rows(student_p, teacher, real(kProbFloor))
                                  : nd::kl_div_rows(teacher, student_p, real(kProbFloor));
          total = accumulate(total, term, first);
          first = false;
        }
        loss = mean_rows(total, positions);
        break;
      }
      case Method::kGA:
        loss = ga_loss(m, select(forget, idx));
        break;
      case Method::kIDK:
        loss = rt_loss(m, select(forget, idx));
        break;
      case Method::kNPO: {
        std::vector<double> refs;
        for (auto i : idx) refs.push_back(ref_logprob[i]);
        loss = npo_loss(m, select(forget, idx), refs, spec.beta);
        break;
      }
      case Method::kTA:
        throw ContractError("task arithmetic has no training objective");
    }
    if (spec.retain_mode != RetainMode::kNone && !retain.empty()) {
      std::vector<TrainPair> rb;
      for (std::size_t j = 0; j < cfg.batch_size; ++j) {
        rb.push_back(retain[retain_order[(step * cfg.batch_size + j) % retain.size()]]);
      }
      const Tensor reg = spec.retain_mode == RetainMode::kRT ? rt_loss(m, rb)
                                                             : kl_retain_loss(m, original, rb);
      loss = nd::add(loss, nd::scale(reg, real(spec.retain_weight)));
    }
    return {loss, double(positions)};
  };

  result.epoch_losses = train::train(student, forget.size(), cfg, objective,
                                     [&](std::size_t, const LanguageModel& m) {
                                       result.checkpoints.push_back(m);
                                     });
  return result;
}

}  // namespace rkld::unlearn

// SPDX-License-Identifier: Apache-2.0
// Finite-difference check of the LM loss and every unlearning loss. Built
// against the 64-bit library; prints "<loss> <max relative error>" per loss
// and exits non-zero when any exceeds the tolerance.
#include <cstdio>
#include <functional>
#include <map>
#include <vector>

#include "rkld/ndgrad/gradcheck.hpp"
#include "rkld/trainer/trainer.hpp"
#include "rkld/unlearn/unlearners.hpp"
#include "rkld/util/rng.hpp"

using namespace rkld;
using nd::Tensor;

namespace {

constexpr double kTolerance = 1e-3;
constexpr double kStep = 2e-4;
constexpr int kSeeds = 10;

lm::LMConfig config(std::size_t vocab, std::uint64_t seed) {
  lm::LMConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ctx_len = 12;
  cfg.seed = seed;
  return cfg;
}

// Checks run at a generic point: the small initialization scale leaves some
// attention gradients near 1e-9, where central differences are pure rounding.
// The key bias has an exactly zero gradient, so the step also has to keep the
// rounding noise of the larger NPO loss below the 1e-8 denominator floor.
lm::LanguageModel randomized(const lm::LMConfig& cfg) {
  lm::LanguageModel m(cfg);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  for (auto& p : m.parameters()) {
    for (auto& v : p.value.mutable_data()) v = nd::real(v + rng.normal(0.0, 0.1));
  }
  return m;
}

Tensor student_probs(const lm::LanguageModel& m, const corpus::TrainPair& p) {
  return nd::softmax(lm::target_logits(m, p.x, p.y));
}

Tensor teacher_probs(const lm::LanguageModel& ori, const lm::LanguageModel& str, const corpus::TrainPair& p) {
  nd::NoGradGuard no_grad;
  const auto l_ori = lm::target_logits(ori, p.x, p.y);
  const auto l_str = lm::target_logits(str, p.x, p.y);
  return nd::softmax(unlearn::build_teacher_logits(l_ori, l_str, nd::real(8)));
}

}  // namespace

int main() {
  const lm::Tokenizer tok({"who", "wrote", "ann", "bob", "the", "book", "lives", "in", "oslo", "?"});
  const std::vector<corpus::TrainPair> batch = {
      corpus::render_pair(tok, "who wrote the book ?", "ann wrote the book"),
      corpus::render_pair(tok, "bob lives in ?", "bob lives in oslo")};
  const std::vector<std::size_t> all = {0, 1};

  std::map<std::string, double> worst;
  for (int s = 1; s <= kSeeds; ++s) {
    const std::uint64_t seed = std::uint64_t(s);
    lm::LanguageModel student = randomized(config(tok.vocab_size(), seed));
    const lm::LanguageModel original = randomized(config(tok.vocab_size(), seed + 100));
    const lm::LanguageModel strengthened = randomized(config(tok.vocab_size(), seed + 200));
    std::vector<double> ref;
    for (const auto& p : batch) ref.push_back(unlearn::sequence_logprob(original, p).item());

    const std::vector<std::pair<std::string, std::function<Tensor()>>> losses = {
        {"lm", [&] { return train::batch_nll(student, batch, all).loss; }},
        {"rkl",
         [&] {
           return nd::add(unlearn::rkl_loss(teacher_probs(original, strengthened, batch[0]),
                                            student_probs(student, batch[0])),
                          unlearn::rkl_loss(teacher_probs(original, strengthened, batch[1]),
                                            student_probs(student, batch[1])));
         }},
        {"fkl",
         [&] {
           return nd::add(unlearn::fkl_loss(teacher_probs(original, strengthened, batch[0]),
                                            student_probs(student, batch[0])),
                          unlearn::fkl_loss(teacher_probs(original, strengthened, batch[1]),
                                            student_probs(student, batch[1])));
         }},
        {"ga", [&] { return unlearn::ga_loss(student, batch); }},
        {"npo", [&] { return unlearn::npo_loss(student, batch, ref, 0.1); }},
        {"rt", [&] { return unlearn::rt_loss(student, batch); }},
        {"retain_kl", [&] { return unlearn::kl_retain_loss(student, original, batch); }},
    };
    std::vector<Tensor> leaves;
    for (auto& p : student.parameters()) leaves.push_back(p.value);
    for (const auto& [name, fn] : losses) {
      const double err = nd::finite_diff_check_leaves(fn, leaves, kStep);
      worst[name] = std::max(worst[name], err);
    }
  }

  bool ok = true;
  for (const auto& [name, err] : worst) {
    std::printf("%s %.3e\n", name.c_str(), err);
    ok = ok && err <= kTolerance;
  }
  return ok ? 0 : 1;
}

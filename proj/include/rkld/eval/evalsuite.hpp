// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rkld/corpus/synthetic_tofu.hpp"
#include "rkld/tinylm/model.hpp"

namespace rkld::eval {

using corpus::QAItem;
using lm::LanguageModel;
using lm::Tokenizer;

/// LCS-based F1 over whitespace tokens. 0 when either side is empty.
double rouge_l(const std::string& candidate, const std::string& reference);

/// P(a | q)^(1/|a|) over the answer's tokens (no end marker).
double norm_answer_prob(const LanguageModel& model, const Tokenizer& tok, const std::string& q,
                        const std::string& a);

/// Mean normalized probability of the perturbed answers divided by that of the
/// paraphrased answer.
double truth_ratio(const LanguageModel& model, const Tokenizer& tok, const QAItem& item);
double truth_ratio(double paraphrased, std::span<const double> perturbed);

struct TruthRatioSample {
  const QAItem* item = nullptr;
  double r_truth = 0;
};

std::vector<TruthRatioSample> truth_ratios(const LanguageModel& model, const Tokenizer& tok,
                                           std::span<const QAItem> items);

struct KsResult {
  double d = 0;
  double p = 1;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value.
/// Throws ContractError when either sample has fewer than two values.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda);

/// Monte Carlo permutation p-value of the KS statistic: the share of random
/// relabelings whose D reaches the observed one.
double ks_permutation_pvalue(std::span<const double> a, std::span<const double> b,
                             std::size_t resamples, std::uint64_t seed);

inline constexpr double kSignificance = 0.05;

double forget_quality(std::span<const TruthRatioSample> unlearned,
                      std::span<const TruthRatioSample> retrained);
double forget_quality(const LanguageModel& unlearned, const LanguageModel& retrained,
                      const corpus::CorpusBundle& bundle, const Tokenizer& tok);

/// Harmonic mean, defined as 0 when any entry is <= 0.
double harmonic_mean(std::span<const double> values);

// Greedy answer to a question, detokenized, without the question.
std::string greedy_answer(const LanguageModel& model, const Tokenizer& tok, const std::string& q,
                          std::size_t max_new = 32);

struct DatasetScores {
  double rouge_l = 0;
  double probability = 0;
  double truth_ratio_utility = 0;  // max(0, 1 - mean R_truth), clipped to [0, 1]
};

DatasetScores score_dataset(const LanguageModel& model, const Tokenizer& tok,
                            std::span<const QAItem> items, std::size_t max_new = 32);

inline constexpr std::array<const char*, 3> kUtilityDatasets = {"retain", "held_out_authors",
                                                                "world_facts"};
inline constexpr std::array<const char*, 3> kUtilityMetrics = {"rouge_l", "probability",
                                                               "truth_ratio"};

struct EvalReport {
  double forget_quality = 0;
  double model_utility = 0;
  // (rouge_l, probability, truth_ratio) for retain, held-out authors and world
  // facts, in that order.
  std::array<double, 9> components{};
  double forget_rouge_l = 0;
  double forget_probability = 0;
  // Share of forget items whose golden value is in the fill-in-blank top 5.
  double forget_leakage = 0;

  static std::vector<std::string> component_names();
  bool forgets() const { return forget_quality > kSignificance; }
};

struct EvalOptions {
  std::size_t retain_subset = 40;  // 0 scores every retain item
  std::size_t max_new = 32;
};

/// Retain items scored for utility: an evenly strided subset of s_retain.
std::vector<QAItem> retain_eval_items(const corpus::CorpusBundle& bundle, std::size_t limit);

/// Fills the nine components and model_utility.
void model_utility(const LanguageModel& model, const corpus::CorpusBundle& bundle,
                   const Tokenizer& tok, const EvalOptions& opts, EvalReport& report);

/// Full evaluation against cached truth ratios of the retrained reference.
EvalReport evaluate(const LanguageModel& model, std::span<const TruthRatioSample> retrained,
                    const corpus::CorpusBundle& bundle, const Tokenizer& tok,
                    const EvalOptions& opts = {});

std::string to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Top-k next tokens after the prefix, by probability then by id.
std::vector<std::pair<std::string, double>> fill_blank_topk(const LanguageModel& model,
                                                            const Tokenizer& tok,
                                                            const std::string& prefix,
                                                            std::size_t k);

/// Whether the item's golden value is among the top-k fill-in-blank tokens.
bool leaks(const LanguageModel& model, const Tokenizer& tok, const QAItem& item, std::size_t k = 5);

/// Share of items whose golden value leaks into the top-k.
double leakage_rate(const LanguageModel& model, const Tokenizer& tok, std::span<const QAItem> items,
                    std::size_t k = 5);

}  // namespace rkld::eval

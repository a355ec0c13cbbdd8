// SPDX-License-Identifier: Apache-2.0
#include "rkld/eval/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "rkld/errors.hpp"
#include "rkld/util/rng.hpp"

namespace rkld::eval {

using nd::Tensor;
using nd::TokenId;

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<TokenId> prompt_ids(const Tokenizer& tok, const std::string& text) {
  std::vector<TokenId> ids{Tokenizer::kBos};
  const auto body = tok.tokenize(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

}  // namespace

double rouge_l(const std::string& candidate, const std::string& reference) {
  const auto c = split_words(candidate);
  const auto r = split_words(reference);
  if (c.empty() || r.empty()) return 0.0;
  std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
  for (std::size_t i = 1; i <= c.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j) {
      cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = double(prev[r.size()]);
  if (lcs == 0) return 0.0;
  const double p = lcs / double(c.size());
  const double rec = lcs / double(r.size());
  return 2 * p * rec / (p + rec);
}

double norm_answer_prob(const LanguageModel& model, const Tokenizer& tok, const std::string& q,
                        const std::string& a) {
  const auto answer = tok.tokenize(a);
  if (answer.empty()) throw ContractError("norm_answer_prob needs a non-empty answer");
  const auto lp = lm::sequence_logprobs(model, prompt_ids(tok, q), answer);
  double s = 0;
  for (double v : lp) s += v;
  return std::exp(s / double(lp.size()));
}

double truth_ratio(const LanguageModel& model, const Tokenizer& tok, const QAItem& item) {
  if (item.perturbed_answers.empty()) throw ContractError("truth_ratio needs perturbed answers");
  std::vector<double> pert;
  for (const auto& a : item.perturbed_answers) pert.push_back(norm_answer_prob(model, tok, item.question, a));
  return truth_ratio(norm_answer_prob(model, tok, item.question, item.paraphrased_answer), pert);
}

double truth_ratio(double paraphrased, std::span<const double> perturbed) {
  if (perturbed.empty()) throw ContractError("truth_ratio needs perturbed answers");
  if (!(paraphrased > 0)) throw ContractError("paraphrased answer probability must be positive");
  double mean = 0;
  for (double p : perturbed) mean += p;
  return mean / double(perturbed.size()) / paraphrased;
}

std::vector<TruthRatioSample> truth_ratios(const LanguageModel& model, const Tokenizer& tok,
                                           std::span<const QAItem> items) {
  std::vector<TruthRatioSample> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back({&it, truth_ratio(model, tok, it)});
  return out;
}

namespace {

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double n = double(a.size()), m = double(b.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(double(i) / n - double(j) / m));
  }
  return d;
}

}  // namespace

double kolmogorov_q(double lambda) {
  if (lambda <= 0) return 1.0;
  double q = 0;
  if (lambda < 1.18) {
    // Equivalent theta-function form; converges quickly for small lambda.
    const double pi = std::numbers::pi;
    double s = 0;
    for (int k = 1;; ++k) {
      const double odd = 2.0 * k - 1.0;
      const double term = std::exp(-odd * odd * pi * pi / (8 * lambda * lambda));
      s += term;
      if (term < 1e-10) break;
    }
    q = 1.0 - std::sqrt(2 * pi) / lambda * s;
  } else {
    for (int k = 1;; ++k) {
      const double term = std::exp(-2.0 * k * k * lambda * lambda);
      q += (k % 2 == 1 ? 2.0 : -2.0) * term;
      if (term < 1e-10) break;
    }
  }
  return std::clamp(q, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ContractError("ks_two_sample needs at least two values per sample");
  KsResult r;
  r.d = ks_statistic({a.begin(), a.end()}, {b.begin(), b.end()});
  const double n = double(a.size()), m = double(b.size());
  r.p = r.d == 0 ? 1.0 : kolmogorov_q(r.d * std::sqrt(n * m / (n + m)));
  return r;
}

double ks_permutation_pvalue(std::span<const double> a, std::span<const double> b,
                             std::size_t resamples, std::uint64_t seed) {
  if (resamples == 0) throw ContractError("resamples must be positive");
  const double observed = ks_statistic({a.begin(), a.end()}, {b.begin(), b.end()});
  std::vector<double> pool(a.begin(), a.end());
  pool.insert(pool.end(), b.begin(), b.end());
  Rng rng(seed);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    rng.shuffle(pool);
    const std::vector<double> x(pool.begin(), pool.begin() + std::ptrdiff_t(a.size()));
    const std::vector<double> y(pool.begin() + std::ptrdiff_t(a.size()), pool.end());
    if (ks_statistic(x, y) >= observed - 1e-12) ++hits;
  }
  return double(hits) / double(resamples);
}

double forget_quality(std::span<const TruthRatioSample> unlearned,
                      std::span<const TruthRatioSample> retrained) {
  std::vector<double> a, b;
  for (const auto& s : unlearned) a.push_back(s.r_truth);
  for (const auto& s : retrained) b.push_back(s.r_truth);
  return ks_two_sample(a, b).p;
}

double forget_quality(const LanguageModel& unlearned, const LanguageModel& retrained,
                      const corpus::CorpusBundle& bundle, const Tokenizer& tok) {
  return forget_quality(truth_ratios(unlearned, tok, bundle.s_forget),
                        truth_ratios(retrained, tok, bundle.s_forget));
}

double harmonic_mean(std::span<const double> values) {
  if (values.empty()) throw ContractError("harmonic_mean of nothing");
  double inv = 0;
  for (double v : values) {
    if (!(v > 0)) return 0.0;
    inv += 1.0 / v;
  }
  return double(values.size()) / inv;
}

std::string greedy_answer(const LanguageModel& model, const Tokenizer& tok, const std::string& q,
                          std::size_t max_new) {
  const auto prefix = prompt_ids(tok, q);
  const auto seq = lm::generate(model, prefix, max_new);
  return tok.detokenize(std::span<const TokenId>(seq).subspan(prefix.size()));
}

DatasetScores score_dataset(const LanguageModel& model, const Tokenizer& tok,
                            std::span<const QAItem> items, std::size_t max_new) {
  if (items.empty()) throw ContractError("cannot score an empty dataset");
  DatasetScores s;
  double tr = 0;
  for (const auto& it : items) {
    s.rouge_l += rouge_l(greedy_answer(model, tok, it.question, max_new), it.answer);
    s.probability += norm_answer_prob(model, tok, it.question, it.answer);
    tr += truth_ratio(model, tok, it);
  }
  const double n = double(items.size());
  s.rouge_l /= n;
  s.probability /= n;
  s.truth_ratio_utility = std::clamp(1.0 - tr / n, 0.0, 1.0);
  return s;
}

std::vector<std::string> EvalReport::component_names() {
  std::vector<std::string> out;
  for (const char* d : kUtilityDatasets) {
    for (const char* m : kUtilityMetrics) out.push_back(std::string(d) + "_" + m);
  }
  return out;
}

std::vector<QAItem> retain_eval_items(const corpus::CorpusBundle& bundle, std::size_t limit) {
  const auto& all = bundle.s_retain;
  if (limit == 0 || limit >= all.size()) return all;
  std::vector<QAItem> out;
  for (std::size_t i = 0; i < limit; ++i) out.push_back(all[i * all.size() / limit]);
  return out;
}

void model_utility(const LanguageModel& model, const corpus::CorpusBundle& bundle,
                   const Tokenizer& tok, const EvalOptions& opts, EvalReport& report) {
  const std::vector<QAItem> sets[3] = {retain_eval_items(bundle, opts.retain_subset),
                                       bundle.held_out_authors, bundle.world_facts};
  for (std::size_t d = 0; d < 3; ++d) {
    const DatasetScores s = score_dataset(model, tok, sets[d], opts.max_new);
    report.components[3 * d + 0] = s.rouge_l;
    report.components[3 * d + 1] = s.probability;
    report.components[3 * d + 2] = s.truth_ratio_utility;
  }
  report.model_utility = harmonic_mean(report.components);
}

EvalReport evaluate(const LanguageModel& model, std::span<const TruthRatioSample> retrained,
                    const corpus::CorpusBundle& bundle, const Tokenizer& tok,
                    const EvalOptions& opts) {
  EvalReport report;
  report.forget_quality = forget_quality(truth_ratios(model, tok, bundle.s_forget), retrained);
  model_utility(model, bundle, tok, opts, report);
  double rouge = 0, prob = 0;
  for (const auto& it : bundle.s_forget) {
    rouge += rouge_l(greedy_answer(model, tok, it.question, opts.max_new), it.answer);
    prob += norm_answer_prob(model, tok, it.question, it.answer);
  }
  report.forget_rouge_l = rouge / double(bundle.s_forget.size());
  report.forget_probability = prob / double(bundle.s_forget.size());
  report.forget_leakage = leakage_rate(model, tok, bundle.s_forget);
  return report;
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["forget_quality"] = report.forget_quality;
  j["model_utility"] = report.model_utility;
  nlohmann::ordered_json comps;
  const auto names = EvalReport::component_names();
  for (std::size_t i = 0; i < names.size(); ++i) comps[names[i]] = report.components[i];
  j["components"] = comps;
  j["forget_rouge_l"] = report.forget_rouge_l;
  j["forget_probability"] = report.forget_probability;
  j["forget_leakage"] = report.forget_leakage;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.forget_quality = j.at("forget_quality").get<double>();
  r.model_utility = j.at("model_utility").get<double>();
  const auto names = EvalReport::component_names();
  for (std::size_t i = 0; i < names.size(); ++i) r.components[i] = j.at("components").at(names[i]).get<double>();
  r.forget_rouge_l = j.at("forget_rouge_l").get<double>();
  r.forget_probability = j.at("forget_probability").get<double>();
  r.forget_leakage = j.at("forget_leakage").get<double>();
  return r;
}

std::vector<std::pair<std::string, double>> fill_blank_topk(const LanguageModel& model,
                                                            const Tokenizer& tok,
                                                            const std::string& prefix,
                                                            std::size_t k) {
  if (k > tok.vocab_size()) throw ContractError("k exceeds the vocabulary size");
  const auto ids = prompt_ids(tok, prefix);
  std::vector<double> probs;
  {
    nd::NoGradGuard no_grad;
    const Tensor p = nd::softmax(model.forward_logits_from(ids, ids.size() - 1));
    probs.assign(p.data().begin(), p.data().end());
  }
  std::vector<std::size_t> order(probs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(tok.word(TokenId(order[i])), probs[order[i]]);
  return out;
}

bool leaks(const LanguageModel& model, const Tokenizer& tok, const QAItem& item, std::size_t k) {
  for (const auto& [word, p] : fill_blank_topk(model, tok, item.fill_blank_prefix(), k)) {
    if (word == item.value) return true;
  }
  return false;
}

double leakage_rate(const LanguageModel& model, const Tokenizer& tok, std::span<const QAItem> items,
                    std::size_t k) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& it : items) hits += leaks(model, tok, it, k) ? 1 : 0;
  return double(hits) / double(items.size());
}

}  // namespace rkld::eval

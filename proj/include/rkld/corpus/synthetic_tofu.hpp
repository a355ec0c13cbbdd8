// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rkld/ndgrad/ops.hpp"
#include "rkld/tinylm/tokenizer.hpp"

namespace rkld::corpus {

using nd::TokenId;

enum class Split { kForget, kRetain, kHeldOut, kWorld };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Profile {
  int person_id = 0;
  std::string name;                               // "first last"
  std::map<std::string, std::string> attributes;  // attribute key -> value word
};

// One question about one attribute. Every answer rendering ends with the
// attribute value, so answers differ from each other only in that final slot
// or in the frame words before it.
struct QAItem {
  std::string question;
  std::string answer;
  std::string paraphrased_answer;
  std::vector<std::string> perturbed_answers;
  int owner = -1;  // person_id, or -1 for world facts
  Split split = Split::kRetain;
  std::string attribute;
  std::string value;

  // Question plus the golden answer up to (not including) the value slot.
  std::string fill_blank_prefix() const;
};

struct CorpusBundle {
  std::uint64_t seed = 0;
  int n_persons = 0;
  int qa_per_person = 0;
  int forget_pct = 0;

  std::vector<Profile> profiles;           // persons in s
  std::vector<Profile> held_out_profiles;  // pretraining-only persons
  std::vector<QAItem> s;                   // all QA about persons in s
  std::vector<QAItem> s_forget;
  std::vector<QAItem> s_retain;
  std::vector<QAItem> world_facts;
  std::vector<QAItem> held_out_authors;
  std::vector<std::string> idk_templates;

  // Golden QA rendered for the base fit: s, held-out persons and world facts.
  std::vector<QAItem> pretrain_items() const;
  // Sorted distinct words over every string in the bundle.
  std::vector<std::string> vocabulary() const;
  lm::Tokenizer make_tokenizer() const;
};

inline constexpr int kHeldOutPersons = 5;
inline constexpr int kWorldFacts = 30;
inline constexpr int kPerturbedPerItem = 3;

/// Deterministic generator. Throws ContractError on invalid arguments and
/// CapacityError when the name or attribute pools cannot cover the request.
CorpusBundle generate_corpus(std::uint64_t seed, int n_persons = 40, int qa_per_person = 10,
                             int forget_pct = 10);

// Final word of an answer rendering, i.e. the attribute slot.
std::string extract_attribute(const std::string& answer);

struct TrainPair {
  std::vector<TokenId> x;  // BOS + question
  std::vector<TokenId> y;  // answer + EOS; the only positions that carry loss
};

enum class Which { kPretrain, kForget, kRetain, kIdk };

std::vector<TrainPair> render_training_sequences(const CorpusBundle& bundle,
                                                 const lm::Tokenizer& tokenizer, Which which);

TrainPair render_pair(const lm::Tokenizer& tokenizer, const std::string& question,
                      const std::string& answer);

// Canonical JSON (sorted keys) and its inverse.
std::string to_json(const CorpusBundle& bundle);
CorpusBundle from_json(const std::string& text);

}  // namespace rkld::corpus

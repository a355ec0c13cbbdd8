// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rkld/ndgrad/ops.hpp"

namespace rkld::lm {

using nd::TokenId;

// Word-level tokenizer over a closed vocabulary. Ids 0..3 are reserved for the
// special tokens; words follow in the order given at construction.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  Tokenizer() = default;
  // Duplicate words are ignored after their first occurrence.
  explicit Tokenizer(const std::vector<std::string>& words);

  std::vector<TokenId> tokenize(std::string_view text) const;
  // Specials are dropped; words are joined by single spaces.
  std::string detokenize(std::span<const TokenId> ids) const;

  std::size_t vocab_size() const { return words_.size(); }
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  bool is_special(TokenId id) const { return id >= 0 && std::size_t(id) < kNumSpecials; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace rkld::lm

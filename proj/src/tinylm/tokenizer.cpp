// SPDX-License-Identifier: Apache-2.0
#include "rkld/tinylm/tokenizer.hpp"

#include "rkld/errors.hpp"

namespace rkld::lm {

Tokenizer::Tokenizer(const std::vector<std::string>& words)
    : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {
  for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], TokenId(i));
  for (const auto& w : words) {
    if (w.empty() || w.find(' ') != std::string::npos) {
      throw ContractError("tokenizer word must be non-empty without spaces: '" + w + "'");
    }
    if (ids_.emplace(w, TokenId(words_.size())).second) words_.push_back(w);
  }
}

std::vector<TokenId> Tokenizer::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    if (end > pos) out.push_back(id(text.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

std::string Tokenizer::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (auto t : ids) {
    if (is_special(t)) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

TokenId Tokenizer::id(std::string_view w) const {
  auto it = ids_.find(std::string(w));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(TokenId id) const {
  if (id < 0 || std::size_t(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(words_.size()));
  }
  return words_[std::size_t(id)];
}

}  // namespace rkld::lm

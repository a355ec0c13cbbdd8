// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rkld/ndgrad/ops.hpp"
#include "rkld/ndgrad/tensor.hpp"

namespace rkld::lm {

using nd::Tensor;
using nd::TokenId;

struct LMConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ctx_len = 64;
  std::uint64_t seed = 0;

  bool operator==(const LMConfig&) const = default;
};

// Same parameter names and shapes; the init seed may differ.
bool same_architecture(const LMConfig& a, const LMConfig& b);

// Throws ContractError when the config cannot describe a model.
void validate(const LMConfig& cfg);

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Per-layer projected q/k/v rows of the tokens decoded so far.
struct DecodeCache {
  std::vector<std::vector<nd::real>> qkv;
  std::size_t length = 0;
};

// Pre-norm decoder-only transformer with learned absolute positions and a
// GELU MLP. Copies are deep: every copy owns its own parameters.
class LanguageModel {
 public:
  explicit LanguageModel(const LMConfig& cfg);
  LanguageModel(const LanguageModel& other);
  LanguageModel& operator=(const LanguageModel& other);
  LanguageModel(LanguageModel&&) noexcept = default;
  LanguageModel& operator=(LanguageModel&&) noexcept = default;

  const LMConfig& config() const { return cfg_; }

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  const Tensor& param(std::string_view name) const;
  std::size_t num_parameters() const;

  void zero_grad();

  /// Logits [T x V]; row t scores the token at position t + 1.
  Tensor forward_logits(std::span<const TokenId> tokens) const;

  /// Same as forward_logits but only materializes rows first_row..T-1, which
  /// skips the vocabulary projection for rows nobody reads.
  Tensor forward_logits_from(std::span<const TokenId> tokens, std::size_t first_row) const;

  /// Appends one token to the cache and returns its logits row [1 x V]. The
  /// values match the corresponding row of forward_logits bit for bit.
  Tensor decode_step(TokenId token, DecodeCache& cache) const;

 private:
  void build_parameters();
  const Tensor& p(std::size_t index) const { return params_[index].value; }

  LMConfig cfg_;
  std::vector<NamedTensor> params_;
};

/// Logits rows [|target| x V] scoring each target token given everything that
/// precedes it. Differentiable through the model parameters.
Tensor target_logits(const LanguageModel& model, std::span<const TokenId> prefix,
                     std::span<const TokenId> target);

/// log P(target_i | prefix, target_<i) for every i.
std::vector<double> sequence_logprobs(const LanguageModel& model, std::span<const TokenId> prefix,
                                      std::span<const TokenId> target);

struct GenerateMode {
  std::size_t top_k = 0;  // 0 selects greedy decoding
  std::uint64_t seed = 0;

  static GenerateMode greedy() { return {}; }
  static GenerateMode sample_top_k(std::size_t k, std::uint64_t seed) { return {k, seed}; }
};

/// Extends prefix by up to max_new tokens, stopping after EOS or at ctx_len.
/// The returned sequence includes the prefix.
std::vector<TokenId> generate(const LanguageModel& model, std::span<const TokenId> prefix,
                              std::size_t max_new, GenerateMode mode = GenerateMode::greedy());

/// theta = base + scale * (other - base), per named tensor.
LanguageModel param_axpy(const LanguageModel& base, const LanguageModel& other, double scale);

}  // namespace rkld::lm

// SPDX-License-Identifier: Apache-2.0
#include "rkld/tinylm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rkld/errors.hpp"
#include "rkld/tinylm/tokenizer.hpp"
#include "rkld/util/rng.hpp"

namespace rkld::lm {

using nd::real;

namespace {

constexpr std::size_t kPerLayer = 12;
constexpr double kInitStd = 0.02;

enum LayerSlot : std::size_t {
  kLn1Gain,
  kLn1Shift,
  kQkvWeight,
  kQkvBias,
  kOutWeight,
  kOutBias,
  kLn2Gain,
  kLn2Shift,
  kUpWeight,
  kUpBias,
  kDownWeight,
  kDownBias,
};

}  // namespace

void validate(const LMConfig& cfg) {
  if (cfg.vocab_size == 0 || cfg.d_model == 0 || cfg.n_layers == 0 || cfg.n_heads == 0 ||
      cfg.ctx_len == 0) {
    throw ContractError("LMConfig fields must all be positive");
  }
  if (cfg.d_model % cfg.n_heads != 0) {
    throw ContractError("d_model " + std::to_string(cfg.d_model) + " not divisible by n_heads " +
                        std::to_string(cfg.n_heads));
  }
}

LanguageModel::LanguageModel(const LMConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  build_parameters();
}

LanguageModel::LanguageModel(const LanguageModel& other) : cfg_(other.cfg_) {
  params_.reserve(other.params_.size());
  for (const auto& [name, value] : other.params_) params_.push_back({name, value.clone()});
}

LanguageModel& LanguageModel::operator=(const LanguageModel& other) {
  if (this != &other) {
    LanguageModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void LanguageModel::build_parameters() {
  const std::size_t d = cfg_.d_model, v = cfg_.vocab_size, h = 4 * d;
  Rng rng(cfg_.seed);
  auto weight = [&](std::string name, nd::Shape shape) {
    std::vector<real> data(nd::numel_of(shape));
    for (auto& x : data) x = static_cast<real>(rng.normal(0.0, kInitStd));
    params_.push_back({std::move(name), Tensor(std::move(shape), std::move(data), true)});
  };
  auto constant = [&](std::string name, std::size_t n, real value) {
    params_.push_back({std::move(name), Tensor({n}, std::vector<real>(n, value), true)});
  };

  weight("tok_emb", {v, d});
  weight("pos_emb", {cfg_.ctx_len, d});
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    constant(pre + "ln1.gain", d, real(1));
    constant(pre + "ln1.shift", d, real(0));
    weight(pre + "attn.qkv.weight", {d, 3 * d});
    constant(pre + "attn.qkv.bias", 3 * d, real(0));
    weight(pre + "attn.out.weight", {d, d});
    constant(pre + "attn.out.bias", d, real(0));
    constant(pre + "ln2.gain", d, real(1));
    constant(pre + "ln2.shift", d, real(0));
    weight(pre + "mlp.up.weight", {d, h});
    constant(pre + "mlp.up.bias", h, real(0));
    weight(pre + "mlp.down.weight", {h, d});
    constant(pre + "mlp.down.bias", d, real(0));
  }
  constant("ln_f.gain", d, real(1));
  constant("ln_f.shift", d, real(0));
  weight("head.weight", {d, v});
}

const Tensor& LanguageModel::param(std::string_view name) const {
  for (const auto& np : params_) {
    if (np.name == name) return np.value;
  }
  throw ContractError("no parameter named " + std::string(name));
}

std::size_t LanguageModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& np : params_) n += np.value.numel();
  return n;
}

void LanguageModel::zero_grad() {
  for (auto& np : params_) np.value.zero_grad();
}

Tensor LanguageModel::forward_logits(std::span<const TokenId> tokens) const {
  return forward_logits_from(tokens, 0);
}

Tensor LanguageModel::forward_logits_from(std::span<const TokenId> tokens,
                                          std::size_t first_row) const {
  const std::size_t t_len = tokens.size();
  if (t_len == 0) throw ContractError("forward_logits on an empty sequence");
  if (t_len > cfg_.ctx_len) {
    throw LengthError("sequence of " + std::to_string(t_len) + " tokens exceeds ctx_len " +
                      std::to_string(cfg_.ctx_len));
  }
  if (first_row >= t_len) throw ContractError("first_row beyond sequence end");

  std::vector<TokenId> positions(t_len);
  std::iota(positions.begin(), positions.end(), TokenId(0));
  Tensor x = nd::add(nd::gather_rows(p(0), tokens), nd::gather_rows(p(1), positions));

  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::size_t base = 2 + l * kPerLayer;
    auto lp = [&](LayerSlot s) -> const Tensor& { return p(base + s); };

    Tensor h = nd::layer_norm(x, lp(kLn1Gain), lp(kLn1Shift));
    Tensor qkv = nd::add_bias(nd::matmul(h, lp(kQkvWeight)), lp(kQkvBias));
    Tensor att = nd::causal_attention(qkv, cfg_.n_heads);
    x = nd::add(x, nd::add_bias(nd::matmul(att, lp(kOutWeight)), lp(kOutBias)));

    Tensor h2 = nd::layer_norm(x, lp(kLn2Gain), lp(kLn2Shift));
    Tensor up = nd::gelu(nd::add_bias(nd::matmul(h2, lp(kUpWeight)), lp(kUpBias)));
    x = nd::add(x, nd::add_bias(nd::matmul(up, lp(kDownWeight)), lp(kDownBias)));
  }

  if (first_row > 0) {
    std::vector<TokenId> keep(t_len - first_row);
    std::iota(keep.begin(), keep.end(), TokenId(first_row));
    x = nd::gather_rows(x, keep);
  }
  const std::size_t tail = params_.size() - 3;
  Tensor hf = nd::layer_norm(x, p(tail), p(tail + 1));
  return nd::matmul(hf, p(tail + 2));
}

Tensor LanguageModel::decode_step(TokenId token, DecodeCache& cache) const {
  if (cache.length >= cfg_.ctx_len) {
    throw LengthError("decoding past ctx_len " + std::to_string(cfg_.ctx_len));
  }
  nd::NoGradGuard no_grad;
  cache.qkv.resize(cfg_.n_layers);
  const TokenId pos = TokenId(cache.length);
  Tensor x = nd::add(nd::gather_rows(p(0), std::span<const TokenId>(&token, 1)),
                     nd::gather_rows(p(1), std::span<const TokenId>(&pos, 1)));
  const std::size_t width = 3 * cfg_.d_model;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::size_t base = 2 + l * kPerLayer;
    auto lp = [&](LayerSlot s) -> const Tensor& { return p(base + s); };

    Tensor h = nd::layer_norm(x, lp(kLn1Gain), lp(kLn1Shift));
    Tensor qkv_row = nd::add_bias(nd::matmul(h, lp(kQkvWeight)), lp(kQkvBias));
    auto& rows = cache.qkv[l];
    rows.insert(rows.end(), qkv_row.data().begin(), qkv_row.data().end());
    Tensor qkv({cache.length + 1, width}, rows);
    Tensor att = nd::causal_attention_last(qkv, cfg_.n_heads);
    x = nd::add(x, nd::add_bias(nd::matmul(att, lp(kOutWeight)), lp(kOutBias)));

    Tensor h2 = nd::layer_norm(x, lp(kLn2Gain), lp(kLn2Shift));
    Tensor up = nd::gelu(nd::add_bias(nd::matmul(h2, lp(kUpWeight)), lp(kUpBias)));
    x = nd::add(x, nd::add_bias(nd::matmul(up, lp(kDownWeight)), lp(kDownBias)));
  }
  ++cache.length;
  const std::size_t tail = params_.size() - 3;
  return nd::matmul(nd::layer_norm(x, p(tail), p(tail + 1)), p(tail + 2));
}

Tensor target_logits(const LanguageModel& model, std::span<const TokenId> prefix,
                     std::span<const TokenId> target) {
  if (prefix.empty()) throw ContractError("target_logits needs a non-empty prefix");
  if (target.empty()) throw ContractError("target_logits needs a non-empty target");
  std::vector<TokenId> seq(prefix.begin(), prefix.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  return model.forward_logits_from(seq, prefix.size() - 1);
}

std::vector<double> sequence_logprobs(const LanguageModel& model, std::span<const TokenId> prefix,
                                      std::span<const TokenId> target) {
  if (target.empty()) throw ContractError("sequence_logprobs needs a non-empty target");
  nd::NoGradGuard no_grad;
  const Tensor logp = nd::log_softmax(target_logits(model, prefix, target));
  std::vector<double> out(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    out[i] = logp.at(i, std::size_t(target[i]));
  }
  return out;
}

std::vector<TokenId> generate(const LanguageModel& model, std::span<const TokenId> prefix,
                              std::size_t max_new, GenerateMode mode) {
  if (prefix.empty()) throw ContractError("generate needs a non-empty prefix");
  nd::NoGradGuard no_grad;
  std::vector<TokenId> seq(prefix.begin(), prefix.end());
  Rng rng(mode.seed);
  const std::size_t v = model.config().vocab_size;
  if (seq.size() > model.config().ctx_len) {
    throw LengthError("prefix of " + std::to_string(seq.size()) + " tokens exceeds ctx_len");
  }
  DecodeCache cache;
  Tensor logits;
  for (TokenId t : seq) logits = model.decode_step(t, cache);
  for (std::size_t step = 0; step < max_new && seq.size() < model.config().ctx_len; ++step) {
    if (step > 0) logits = model.decode_step(seq.back(), cache);
    const auto row = logits.data();
    TokenId next = 0;
    if (mode.top_k == 0) {
      // First maximum wins, i.e. ties go to the smaller id.
      next = TokenId(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      std::vector<TokenId> order(v);
      std::iota(order.begin(), order.end(), TokenId(0));
      const std::size_t k = std::min(mode.top_k, v);
      std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                        [&](TokenId a, TokenId b) {
                          return row[std::size_t(a)] > row[std::size_t(b)] ||
                                 (row[std::size_t(a)] == row[std::size_t(b)] && a < b);
                        });
      const double top = row[std::size_t(order[0])];
      std::vector<double> w(k);
      double total = 0;
      for (std::size_t i = 0; i < k; ++i) {
        w[i] = std::exp(double(row[std::size_t(order[i])]) - top);
        total += w[i];
      }
      double u = rng.uniform() * total;
      next = order[k - 1];
      for (std::size_t i = 0; i < k; ++i) {
        if (u < w[i]) {
          next = order[i];
          break;
        }
        u -= w[i];
      }
    }
    seq.push_back(next);
    if (next == Tokenizer::kEos) break;
  }
  return seq;
}

bool same_architecture(const LMConfig& a, const LMConfig& b) {
  return a.vocab_size == b.vocab_size && a.d_model == b.d_model && a.n_layers == b.n_layers &&
         a.n_heads == b.n_heads && a.ctx_len == b.ctx_len;
}

LanguageModel param_axpy(const LanguageModel& base, const LanguageModel& other, double scale) {
  if (!same_architecture(base.config(), other.config())) {
    throw CompatibilityError("param_axpy: model configs differ");
  }
  LanguageModel out(base);
  for (std::size_t i = 0; i < out.parameters().size(); ++i) {
    auto dst = out.parameters()[i].value.mutable_data();
    const auto b = base.parameters()[i].value.data();
    const auto o = other.parameters()[i].value.data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = static_cast<real>(double(b[j]) + scale * (double(o[j]) - double(b[j])));
    }
  }
  return out;
}

}  // namespace rkld::lm

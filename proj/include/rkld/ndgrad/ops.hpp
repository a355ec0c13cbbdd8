// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "rkld/ndgrad/tensor.hpp"

namespace rkld::nd {

using TokenId = std::int32_t;

/// Matrix product of a [m x k] and b [k x n]. Dot products accumulate in 64 bits.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise binary ops on identically shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Adds a length-n bias to every row of an [m x n] matrix. This is the only
/// broadcasting the engine supports.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor scale(const Tensor& x, real factor);
Tensor add_scalar(const Tensor& x, real offset);

/// Sum of all entries as a shape-{} scalar, accumulated in 64 bits.
Tensor sum(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// max(x, 0); the subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
/// ln(1 + e^x), evaluated without overflow.
Tensor softplus(const Tensor& x);
/// max(x, floor); gradient passes only where x > floor.
Tensor clamp_min(const Tensor& x, real floor);

/// Row-wise (last axis) log-softmax with max subtraction.
Tensor log_softmax(const Tensor& x);
/// Row-wise (last axis) softmax.
Tensor softmax(const Tensor& x);

/// Row i of the result is table[ids[i]]. Backward scatters additively.
Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids);

/// out[t] = x[t, cols[t]] for an [T x V] matrix.
Tensor pick(const Tensor& x, std::span<const TokenId> cols);

/// Row-wise layer normalization with affine gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, real eps = real(1e-5));

/// Multi-head scaled dot-product attention with a causal mask. qkv packs the
/// query, key and value projections as [T x 3d]; the result is [T x d] with
/// heads concatenated. Position t attends to positions <= t only.
Tensor causal_attention(const Tensor& qkv, std::size_t n_heads);

/// Last output row of causal_attention, computed identically but without
/// gradient tracking. Used by cached decoding.
Tensor causal_attention_last(const Tensor& qkv, std::size_t n_heads);

/// Sum over rows of KL(p_row || q_row) = sum_v p ln(p / max(q, floor)), with
/// terms where p == 0 contributing exactly 0. Either argument may carry a
/// gradient; p and q are probability matrices of identical shape.
Tensor kl_div_rows(const Tensor& p, const Tensor& q, real floor = real(1e-12));

}  // namespace rkld::nd

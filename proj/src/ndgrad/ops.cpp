// SPDX-License-Identifier: Apache-2.0
#include "rkld/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rkld/errors.hpp"

namespace rkld::nd {

namespace {

using Backward = std::function<void(Node&)>;

// Wraps freshly computed values into a tensor, recording history only when
// grad mode is on and some parent participates in differentiation.
Tensor make_result(Shape shape, std::vector<real> data, std::vector<NodePtr> parents,
                   const char* op, Backward fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

// Grad buffer of a parent, or nullptr if it does not take part in backward.
real* grad_of(const NodePtr& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Fixed-order 64-bit dot product; four partial sums keep it pipelined while the
// summation order stays independent of the instruction set.
double dot(const real* x, const real* y, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += double(x[i]) * double(y[i]);
    s1 += double(x[i + 1]) * double(y[i + 1]);
    s2 += double(x[i + 2]) * double(y[i + 2]);
    s3 += double(x[i + 3]) * double(y[i + 3]);
  }
  for (; i < n; ++i) s0 += double(x[i]) * double(y[i]);
  return (s0 + s1) + (s2 + s3);
}

template <class F, class G>
Tensor unary(const Tensor& x, const char* op, F value, G deriv) {
  const auto n = x.numel();
  std::vector<real> out(n);
  const real* xd = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = value(xd[i]);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, op, [xn, deriv](Node& self) {
    real* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xn->data[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<real> out(m * n);
  std::vector<double> acc(n);
  const real* ad = a.data().data();
  const real* bd = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const real* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * double(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<real>(acc[j]);
  }
  auto an = a.node(), bn = b.node();
  return make_result({m, n}, std::move(out), {an, bn}, "matmul", [an, bn, m, k, n](Node& self) {
    const real* g = self.grad.data();
    if (real* ga = grad_of(an)) {
      // dA = dC . B^T
      const real* bd = bn->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          ga[i * k + p] += static_cast<real>(dot(g + i * n, bd + p * n, n));
        }
      }
    }
    if (real* gb = grad_of(bn)) {
      // dB = A^T . dC
      const real* ad = an->data.data();
      std::vector<double> acc(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const real* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          double* arow = acc.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) arow[j] += av * double(grow[j]);
        }
      }
      for (std::size_t i = 0; i < k * n; ++i) gb[i] += static_cast<real>(acc[i]);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, "add", [an, bn](Node& self) {
    for (const auto& p : {an, bn}) {
      if (real* g = grad_of(p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, "sub", [an, bn](Node& self) {
    if (real* g = grad_of(an)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (real* g = grad_of(bn)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, "mul", [an, bn](Node& self) {
    if (real* g = grad_of(an)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (real* g = grad_of(bn)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n || bias.dim() != 1) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs rows of " +
                         shape_str(x.shape()));
  }
  std::vector<real> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + bias[j];
  }
  auto xn = x.node(), bn = bias.node();
  return make_result(x.shape(), std::move(out), {xn, bn}, "add_bias", [xn, bn, m, n](Node& self) {
    if (real* g = grad_of(xn)) {
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    }
    if (real* g = grad_of(bn)) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < m; ++i) s += self.grad[i * n + j];
        g[j] += static_cast<real>(s);
      }
    }
  });
}

Tensor scale(const Tensor& x, real factor) {
  return unary(
      x, "scale", [factor](real v) { return v * factor; },
      [factor](real, real) { return factor; });
}

Tensor add_scalar(const Tensor& x, real offset) {
  return unary(
      x, "add_scalar", [offset](real v) { return v + offset; }, [](real, real) { return real(1); });
}

Tensor sum(const Tensor& x) {
  double s = 0;
  for (real v : x.data()) s += v;
  auto xn = x.node();
  return make_result({}, {static_cast<real>(s)}, {xn}, "sum", [xn](Node& self) {
    if (real* g = grad_of(xn)) {
      const real up = self.grad[0];
      for (std::size_t i = 0; i < xn->data.size(); ++i) g[i] += up;
    }
  });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](real v) { return std::exp(v); }, [](real, real y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](real v) { return std::log(v); }, [](real v, real) { return real(1) / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](real v) { return v > real(0) ? v : real(0); },
      [](real v, real) { return v > real(0) ? real(1) : real(0); });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      x, "gelu",
      [](real v) {
        const double d = v;
        return static_cast<real>(0.5 * d * (1.0 + std::tanh(c * (d + k * d * d * d))));
      },
      [](real v, real) {
        const double d = v;
        const double u = c * (d + k * d * d * d);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * k * d * d);
        return static_cast<real>(0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du);
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, "softplus",
      [](real v) {
        const double d = v;
        return static_cast<real>(std::max(d, 0.0) + std::log1p(std::exp(-std::abs(d))));
      },
      [](real v, real) {
        // logistic(v)
        const double d = v;
        return static_cast<real>(d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d)));
      });
}

Tensor clamp_min(const Tensor& x, real floor) {
  return unary(
      x, "clamp_min", [floor](real v) { return v > floor ? v : floor; },
      [floor](real v, real) { return v > floor ? real(1) : real(0); });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.cols();
  const std::size_t m = n ? x.numel() / n : 0;
  std::vector<real> out(x.numel());
  const real* xd = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const real* row = xd + i * n;
    const real mx = *std::max_element(row, row + n);
    double se = 0;
    for (std::size_t j = 0; j < n; ++j) se += std::exp(double(row[j]) - double(mx));
    const double lse = std::log(se);
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = static_cast<real>(double(row[j]) - double(mx) - lse);
    }
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, "log_softmax", [xn, m, n](Node& self) {
    real* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      const real* g = self.grad.data() + i * n;
      const real* y = self.data.data() + i * n;
      double gs = 0;
      for (std::size_t j = 0; j < n; ++j) gs += g[j];
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += static_cast<real>(double(g[j]) - std::exp(double(y[j])) * gs);
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.cols();
  const std::size_t m = n ? x.numel() / n : 0;
  std::vector<real> out(x.numel());
  const real* xd = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const real* row = xd + i * n;
    const real mx = *std::max_element(row, row + n);
    double se = 0;
    for (std::size_t j = 0; j < n; ++j) se += std::exp(double(row[j]) - double(mx));
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = static_cast<real>(std::exp(double(row[j]) - double(mx)) / se);
    }
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, "softmax", [xn, m, n](Node& self) {
    real* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      const real* g = self.grad.data() + i * n;
      const real* y = self.data.data() + i * n;
      const double gy = dot(g, y, n);
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += static_cast<real>(double(y[j]) * (double(g[j]) - gy));
      }
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<real> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(v) + ")");
    }
    std::copy_n(table.data().data() + std::size_t(id) * d, d, out.data() + i * d);
  }
  auto tn = table.node();
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {tn}, "gather_rows",
                     [tn, saved = std::move(saved), d](Node& self) {
                       real* g = grad_of(tn);
                       if (!g) return;
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         real* dst = g + std::size_t(saved[i]) * d;
                         const real* src = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor pick(const Tensor& x, std::span<const TokenId> cols) {
  require_matrix(x, "pick");
  const std::size_t m = x.rows(), n = x.cols();
  if (cols.size() != m) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " +
                         shape_str(x.shape()));
  }
  std::vector<real> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= n) {
      throw IndexError("pick: column " + std::to_string(cols[i]) + " outside [0, " +
                       std::to_string(n) + ")");
    }
    out[i] = x[i * n + std::size_t(cols[i])];
  }
  auto xn = x.node();
  std::vector<TokenId> saved(cols.begin(), cols.end());
  return make_result({m}, std::move(out), {xn}, "pick", [xn, saved = std::move(saved), n](Node& self) {
    real* g = grad_of(xn);
    if (!g) return;
    for (std::size_t i = 0; i < saved.size(); ++i) g[i * n + std::size_t(saved[i])] += self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, real eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || shift.numel() != n) {
    throw DimensionError("layer_norm: affine params do not match width of " + shape_str(x.shape()));
  }
  std::vector<real> out(m * n);
  std::vector<real> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const real* row = x.data().data() + i * n;
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= double(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= double(n);
    inv_std[i] = 1.0 / std::sqrt(var + double(eps));
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * inv_std[i];
      xhat[i * n + j] = static_cast<real>(h);
      out[i * n + j] = static_cast<real>(h * gain[j] + shift[j]);
    }
  }
  auto xn = x.node(), gn = gain.node(), sn = shift.node();
  return make_result(
      x.shape(), std::move(out), {xn, gn, sn}, "layer_norm",
      [xn, gn, sn, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const real* g = self.grad.data();
        if (real* gg = grad_of(gn)) {
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < m; ++i) s += double(g[i * n + j]) * xhat[i * n + j];
            gg[j] += static_cast<real>(s);
          }
        }
        if (real* gs = grad_of(sn)) {
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < m; ++i) s += g[i * n + j];
            gs[j] += static_cast<real>(s);
          }
        }
        if (real* gx = grad_of(xn)) {
          std::vector<double> dh(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = double(g[i * n + j]) * gn->data[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[i * n + j];
            }
            mean_dh /= double(n);
            mean_dh_h /= double(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[i * n + j] += static_cast<real>(
                  inv_std[i] * (dh[j] - mean_dh - double(xhat[i * n + j]) * mean_dh_h));
            }
          }
        }
      });
}

namespace {

std::size_t attention_width(const Tensor& qkv, std::size_t n_heads, const char* op) {
  require_matrix(qkv, op);
  const std::size_t width = qkv.cols();
  if (n_heads == 0 || width % (3 * n_heads) != 0) {
    throw DimensionError(std::string(op) + ": width " + std::to_string(width) +
                         " is not 3 * d with d divisible by " + std::to_string(n_heads) + " heads");
  }
  return width / 3;
}

// Output row t of one head, attending over rows 0..t of src. Writes the
// attention weights to prow and the head's slice of the output to out.
void attend_row(const real* src, std::size_t width, std::size_t d, std::size_t hd, std::size_t h,
                std::size_t t, double inv_sqrt, std::vector<double>& scores, real* prow, real* out) {
  const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
  double mx = -INFINITY;
  for (std::size_t s = 0; s <= t; ++s) {
    scores[s] = dot(src + t * width + qo, src + s * width + ko, hd) * inv_sqrt;
    mx = std::max(mx, scores[s]);
  }
  double se = 0;
  for (std::size_t s = 0; s <= t; ++s) {
    scores[s] = std::exp(scores[s] - mx);
    se += scores[s];
  }
  for (std::size_t s = 0; s <= t; ++s) prow[s] = static_cast<real>(scores[s] / se);
  for (std::size_t c = 0; c < hd; ++c) {
    double acc = 0;
    for (std::size_t s = 0; s <= t; ++s) acc += double(prow[s]) * src[s * width + vo + c];
    out[qo + c] = static_cast<real>(acc);
  }
}

}  // namespace

Tensor causal_attention(const Tensor& qkv, std::size_t n_heads) {
  const std::size_t d = attention_width(qkv, n_heads, "causal_attention");
  const std::size_t t_len = qkv.rows();
  const std::size_t width = 3 * d;
  const std::size_t hd = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(hd));
  const real* src = qkv.data().data();

  // probs[h][t][s] for s <= t, stored densely as T x T per head.
  std::vector<real> probs(n_heads * t_len * t_len, real(0));
  std::vector<real> out(t_len * d, real(0));
  std::vector<double> scores(t_len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t t = 0; t < t_len; ++t) {
      attend_row(src, width, d, hd, h, t, inv_sqrt, scores,
                 probs.data() + (h * t_len + t) * t_len, out.data() + t * d);
    }
  }
  auto qn = qkv.node();
  return make_result(
      {t_len, d}, std::move(out), {qn}, "causal_attention",
      [qn, probs = std::move(probs), t_len, width, d, hd, n_heads, inv_sqrt](Node& self) {
        real* gq = grad_of(qn);
        if (!gq) return;
        const real* src = qn->data.data();
        const real* g = self.grad.data();
        std::vector<double> dp(t_len);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
          for (std::size_t t = 0; t < t_len; ++t) {
            const real* prow = probs.data() + (h * t_len + t) * t_len;
            const real* gout = g + t * d + qo;
            double pdp = 0;
            for (std::size_t s = 0; s <= t; ++s) {
              dp[s] = dot(gout, src + s * width + vo, hd);
              pdp += double(prow[s]) * dp[s];
              // dV_s += p_ts * dOut_t
              for (std::size_t c = 0; c < hd; ++c) {
                gq[s * width + vo + c] += static_cast<real>(double(prow[s]) * gout[c]);
              }
            }
            for (std::size_t s = 0; s <= t; ++s) {
              const double ds = double(prow[s]) * (dp[s] - pdp) * inv_sqrt;
              if (ds == 0.0) continue;
              for (std::size_t c = 0; c < hd; ++c) {
                gq[t * width + qo + c] += static_cast<real>(ds * src[s * width + ko + c]);
                gq[s * width + ko + c] += static_cast<real>(ds * src[t * width + qo + c]);
              }
            }
          }
        }
      });
}

Tensor causal_attention_last(const Tensor& qkv, std::size_t n_heads) {
  const std::size_t d = attention_width(qkv, n_heads, "causal_attention_last");
  const std::size_t t_len = qkv.rows();
  const std::size_t hd = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(hd));
  std::vector<real> prow(t_len), out(d);
  std::vector<double> scores(t_len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    attend_row(qkv.data().data(), 3 * d, d, hd, h, t_len - 1, inv_sqrt, scores, prow.data(), out.data());
  }
  return Tensor({1, d}, std::move(out));
}

Tensor kl_div_rows(const Tensor& p, const Tensor& q, real floor) {
  require_same_shape(p, q, "kl_div_rows");
  const std::size_t n = p.numel();
  const double log_floor = std::log(double(floor));
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pv = p[i];
    if (pv <= 0.0) continue;
    const double lq = q[i] > floor ? std::log(double(q[i])) : log_floor;
    total += pv * (std::log(pv) - lq);
  }
  auto pn = p.node(), qn = q.node();
  return make_result({}, {static_cast<real>(total)}, {pn, qn}, "kl_div_rows",
                     [pn, qn, floor, log_floor](Node& self) {
                       const double up = self.grad[0];
                       const std::size_t n = pn->data.size();
                       if (real* gp = grad_of(pn)) {
                         for (std::size_t i = 0; i < n; ++i) {
                           const double pv = pn->data[i];
                           const double lp = pv > floor ? std::log(pv) : log_floor;
                           const double lq =
                               qn->data[i] > floor ? std::log(double(qn->data[i])) : log_floor;
                           gp[i] += static_cast<real>(up * (lp - lq + 1.0));
                         }
                       }
                       if (real* gq = grad_of(qn)) {
                         for (std::size_t i = 0; i < n; ++i) {
                           const double qv = qn->data[i];
                           if (qv > floor) {
                             gq[i] += static_cast<real>(-up * double(pn->data[i]) / qv);
                           }
                         }
                       }
                     });
}

}  // namespace rkld::nd

// SPDX-License-Identifier: Apache-2.0
// Built against the 64-bit variant so central differences are meaningful.
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "rkld/errors.hpp"
#include "rkld/ndgrad/gradcheck.hpp"
#include "rkld/ndgrad/ops.hpp"
#include "rkld/util/rng.hpp"

namespace nd = rkld::nd;
using nd::real;
using nd::Tensor;

namespace {

Tensor random_tensor(rkld::Rng& rng, nd::Shape shape, double lo = -1, double hi = 1) {
  std::vector<real> v(nd::numel_of(shape));
  for (auto& x : v) x = real(lo + (hi - lo) * rng.uniform());
  return Tensor(std::move(shape), std::move(v));
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  rkld::Rng rng(seed ^ 0xabcdu);
  return nd::sum(nd::mul(y, random_tensor(rng, y.shape())));
}

std::vector<real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

constexpr double kTol = 1e-3;
constexpr double kH = 1e-5;

}  // namespace

TEST(Matmul, Examples) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor col({2, 1}, {3, 4});
  EXPECT_EQ(values(nd::matmul(eye, col)), (std::vector<real>{3, 4}));
  Tensor row({1, 2}, {1, 2});
  auto out = nd::matmul(row, col);
  EXPECT_EQ(out.shape(), (nd::Shape{1, 1}));
  EXPECT_EQ(out[0], 11);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(nd::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), rkld::DimensionError);
}

TEST(Matmul, GradMatchesFiniteDifferences) {
  rkld::Rng rng(3);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 2});
  EXPECT_LT(nd::finite_diff_check([&](const Tensor& x) { return weighted_sum(nd::matmul(x, b), 1); },
                                  a, 1e-3),
            kTol);
  EXPECT_LT(nd::finite_diff_check([&](const Tensor& x) { return weighted_sum(nd::matmul(a, x), 2); },
                                  b, 1e-3),
            kTol);
}

TEST(LogSoftmax, Examples) {
  auto a = nd::log_softmax(Tensor({1, 2}, {0, 0}));
  EXPECT_NEAR(a[0], -std::log(2.0), 1e-12);
  EXPECT_NEAR(a[1], -std::log(2.0), 1e-12);
  auto b = nd::log_softmax(Tensor({1, 2}, {1000, 1000}));
  EXPECT_NEAR(b[0], -std::log(2.0), 1e-12);
  EXPECT_NEAR(b[1], -std::log(2.0), 1e-12);
  auto c = nd::log_softmax(Tensor({1, 2}, {1, 0}));
  EXPECT_NEAR(c[0], std::log(std::exp(1.0) / (std::exp(1.0) + 1)), 1e-9);
  EXPECT_NEAR(c[1], std::log(1 / (std::exp(1.0) + 1)), 1e-9);
  EXPECT_NEAR(c[0], -0.3133, 1e-4);
  EXPECT_NEAR(c[1], -1.3133, 1e-4);
}

TEST(LogSoftmax, RowsNormalizeOverWideRange) {
  rkld::Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {4, 7}, -1e4, 1e4);
    auto p = nd::exp(nd::log_softmax(x));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        ASSERT_TRUE(std::isfinite(p.at(r, c)));
        s += p.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Relu, Examples) {
  EXPECT_EQ(values(nd::relu(Tensor({3}, {-1, 0, 2}))), (std::vector<real>{0, 0, 2}));
  EXPECT_EQ(values(nd::relu(Tensor({2}, {-3, -0.5}))), (std::vector<real>{0, 0}));
  Tensor x({2}, {-1, 2}, true);
  nd::backward(nd::sum(nd::relu(x)));
  EXPECT_EQ(std::vector<real>(x.grad().begin(), x.grad().end()), (std::vector<real>{0, 1}));
}

TEST(GatherRows, Examples) {
  Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
  const std::vector<nd::TokenId> ids = {2, 0};
  EXPECT_EQ(values(nd::gather_rows(table, ids)), (std::vector<real>{5, 6, 1, 2}));

  Tensor t({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<nd::TokenId> twice = {1, 1};
  nd::backward(nd::sum(nd::gather_rows(t, twice)));
  EXPECT_EQ(std::vector<real>(t.grad().begin(), t.grad().end()),
            (std::vector<real>{0, 0, 2, 2, 0, 0}));

  const std::vector<nd::TokenId> bad = {3};
  EXPECT_THROW(nd::gather_rows(table, bad), rkld::IndexError);
}

TEST(Backward, Examples) {
  Tensor x({3}, {1, 2, 3}, true);
  nd::backward(nd::sum(x));
  EXPECT_EQ(std::vector<real>(x.grad().begin(), x.grad().end()), (std::vector<real>{1, 1, 1}));

  Tensor y({3}, {1, 2, 3}, true);
  nd::backward(nd::sum(nd::scale(y, 0)));
  for (auto g : y.grad()) EXPECT_EQ(g, 0);
}

TEST(Backward, MlpCrossEntropyGradcheck) {
  rkld::Rng rng(5);
  std::vector<Tensor> leaves = {random_tensor(rng, {4, 5}), random_tensor(rng, {5}),
                                random_tensor(rng, {5, 3}), random_tensor(rng, {3})};
  for (auto& l : leaves) l.set_requires_grad(true);
  Tensor input = random_tensor(rng, {2, 4});
  const std::vector<nd::TokenId> labels = {2, 0};
  auto loss = [&] {
    auto h = nd::gelu(nd::add_bias(nd::matmul(input, leaves[0]), leaves[1]));
    auto logits = nd::add_bias(nd::matmul(h, leaves[2]), leaves[3]);
    return nd::scale(nd::sum(nd::pick(nd::log_softmax(logits), labels)), -0.5);
  };
  EXPECT_LT(nd::finite_diff_check_leaves(loss, leaves, kH), kTol);
}

TEST(Backward, SharedSubexpressionMatchesExpandedTree) {
  rkld::Rng rng(9);
  Tensor x0 = random_tensor(rng, {2, 3});
  Tensor shared_x = x0.clone().set_requires_grad(true);
  auto s = nd::exp(shared_x);
  nd::backward(nd::sum(nd::mul(s, nd::add(s, shared_x))));

  Tensor tree_x = x0.clone().set_requires_grad(true);
  nd::backward(nd::sum(nd::mul(nd::exp(tree_x), nd::add(nd::exp(tree_x), tree_x))));
  ASSERT_EQ(shared_x.grad().size(), tree_x.grad().size());
  // The two graphs add the same terms in a different order.
  for (std::size_t i = 0; i < tree_x.grad().size(); ++i) {
    EXPECT_NEAR(shared_x.grad()[i], tree_x.grad()[i], 1e-12 * std::abs(tree_x.grad()[i]));
  }
}

TEST(Tape, TopologicalOrderVisitsEachNodeOnce) {
  rkld::Rng rng(2);
  Tensor x = random_tensor(rng, {2, 2}).set_requires_grad(true);
  auto a = nd::exp(x);
  auto b = nd::add(a, nd::mul(a, x));
  auto loss = nd::sum(nd::add(b, a));
  nd::Tape tape(loss);
  std::set<const nd::Node*> seen;
  for (const nd::Node* n : tape.order()) {
    for (const auto& parent : n->parents) EXPECT_TRUE(seen.count(parent.get())) << n->op;
    EXPECT_TRUE(seen.insert(n).second);
  }
  EXPECT_EQ(tape.order().back(), loss.node().get());
}

TEST(Determinism, IdenticalGraphsGiveIdenticalGradients) {
  auto run = [] {
    rkld::Rng rng(21);
    Tensor a = random_tensor(rng, {3, 5}).set_requires_grad(true);
    Tensor b = random_tensor(rng, {5, 4});
    nd::backward(weighted_sum(nd::softmax(nd::matmul(a, b)), 4));
    return std::vector<real>(a.grad().begin(), a.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(FiniteDiffCheck, Examples) {
  Tensor three({}, {3});
  EXPECT_LT(nd::finite_diff_check([](const Tensor& x) { return nd::sum(nd::mul(x, x)); }, three, 1e-4),
            1e-5);
  EXPECT_EQ(nd::finite_diff_check([](const Tensor& x) { return nd::sum(nd::scale(x, 0)); }, three, 1e-4),
            0);
  Tensor one({}, {1});
  EXPECT_LT(nd::finite_diff_check([](const Tensor& x) { return nd::sum(nd::relu(x)); }, one, 1e-4),
            1e-5);
}

// Every differentiable primitive on 10 seeds, at most 32 elements per input.
class PrimitiveGradcheck : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradcheck, WithinTolerance) {
  const std::uint64_t seed = std::uint64_t(GetParam());
  rkld::Rng rng(seed);
  const Tensor m46 = random_tensor(rng, {4, 6});
  const Tensor m46b = random_tensor(rng, {4, 6});
  const Tensor m63 = random_tensor(rng, {6, 3});
  const Tensor bias6 = random_tensor(rng, {6});
  const Tensor gain6 = random_tensor(rng, {6}, 0.5, 1.5);
  const Tensor pos46 = random_tensor(rng, {4, 6}, 0.1, 2.0);
  // Keep relu/clamp inputs away from their kinks.
  Tensor kinkless = random_tensor(rng, {4, 6});
  for (auto& v : kinkless.mutable_data()) {
    if (std::abs(v) < 0.05) v = real(v < 0 ? -0.1 : 0.1);
  }
  const Tensor qkv = random_tensor(rng, {2, 12});
  const std::vector<nd::TokenId> ids = {1, 3, 0, 3};
  const std::vector<nd::TokenId> cols = {5, 0, 2, 2};
  const Tensor table = random_tensor(rng, {4, 5});

  using Fn = std::function<Tensor(const Tensor&)>;
  const std::vector<std::pair<const char*, std::pair<Fn, Tensor>>> cases = {
      {"matmul", {[&](const Tensor& x) { return nd::matmul(x, m63); }, m46}},
      {"add", {[&](const Tensor& x) { return nd::add(x, m46b); }, m46}},
      {"sub", {[&](const Tensor& x) { return nd::sub(m46b, x); }, m46}},
      {"mul", {[&](const Tensor& x) { return nd::mul(x, m46b); }, m46}},
      {"add_bias", {[&](const Tensor& x) { return nd::add_bias(m46, x); }, bias6}},
      {"scale", {[&](const Tensor& x) { return nd::scale(x, real(-1.7)); }, m46}},
      {"add_scalar", {[&](const Tensor& x) { return nd::add_scalar(x, real(0.3)); }, m46}},
      {"exp", {[&](const Tensor& x) { return nd::exp(x); }, m46}},
      {"log", {[&](const Tensor& x) { return nd::log(x); }, pos46}},
      {"relu", {[&](const Tensor& x) { return nd::relu(x); }, kinkless}},
      {"gelu", {[&](const Tensor& x) { return nd::gelu(x); }, m46}},
      {"softplus", {[&](const Tensor& x) { return nd::softplus(x); }, m46}},
      {"clamp_min", {[&](const Tensor& x) { return nd::clamp_min(x, 0); }, kinkless}},
      {"log_softmax", {[&](const Tensor& x) { return nd::log_softmax(x); }, m46}},
      {"softmax", {[&](const Tensor& x) { return nd::softmax(x); }, m46}},
      {"gather_rows", {[&](const Tensor& x) { return nd::gather_rows(x, ids); }, table}},
      {"pick", {[&](const Tensor& x) { return nd::pick(x, cols); }, m46}},
      {"layer_norm", {[&](const Tensor& x) { return nd::layer_norm(x, gain6, bias6); }, m46}},
      {"layer_norm_gain", {[&](const Tensor& x) { return nd::layer_norm(m46, x, bias6); }, gain6}},
      {"causal_attention", {[&](const Tensor& x) { return nd::causal_attention(x, 2); }, qkv}},
      {"kl_p", {[&](const Tensor& x) { return nd::kl_div_rows(nd::softmax(x), nd::softmax(m46b)); }, m46}},
      {"kl_q", {[&](const Tensor& x) { return nd::kl_div_rows(nd::softmax(m46b), nd::softmax(x)); }, m46}},
  };
  for (const auto& [name, c] : cases) {
    ASSERT_LE(c.second.numel(), 32u) << name;
    const auto& fn = c.first;
    const double err = nd::finite_diff_check(
        [&](const Tensor& x) { return weighted_sum(fn(x), seed); }, c.second, kH);
    EXPECT_LT(err, kTol) << name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, PrimitiveGradcheck, ::testing::Range(1, 11));

TEST(Tensor, ShapeContract) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), rkld::DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at(1, 2), 6);
}

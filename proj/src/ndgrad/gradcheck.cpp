// SPDX-License-Identifier: Apache-2.0
#include "rkld/ndgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rkld::nd {

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  probe.zero_grad();
  backward(f(probe));
  std::vector<real> analytic(probe.numel(), real(0));
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  NoGradGuard no_grad;
  double worst = 0;
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const real saved = values[i];
    values[i] = static_cast<real>(saved + h);
    const double up = f(probe).item();
    values[i] = static_cast<real>(saved - h);
    const double down = f(probe).item();
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
  }
  return worst;
}

double finite_diff_check_leaves(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                double h, std::size_t stride) {
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(f());
  std::vector<std::vector<real>> analytic;
  for (auto& leaf : leaves) {
    std::vector<real> g(leaf.numel(), real(0));
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }

  NoGradGuard no_grad;
  double worst = 0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    for (std::size_t i = 0; i < values.size(); i += std::max<std::size_t>(stride, 1)) {
      const real saved = values[i];
      values[i] = static_cast<real>(saved + h);
      const double up = f().item();
      values[i] = static_cast<real>(saved - h);
      const double down = f().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[l][i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace rkld::nd

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "rkld/ndgrad/tensor.hpp"

namespace rkld::nd {

// Max over coordinates of |analytic - central| / (|central| + 1e-8), where the
// analytic gradient of the scalar f comes from backward() and the central
// difference is (f(x + h e_i) - f(x - h e_i)) / 2h.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

// Same check over leaves captured by a closure (model parameters). Leaves are
// perturbed in place and restored. `stride` > 1 samples every stride-th
// coordinate of each leaf to bound the cost on larger models.
double finite_diff_check_leaves(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                double h, std::size_t stride = 1);

}  // namespace rkld::nd

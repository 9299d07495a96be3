// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "prformer/tensor.hpp"

namespace prformer {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Parameter and flat position of the worst coordinate.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

// Compares backward() against central differences for every coordinate of
// every tensor in `wrt`. Error per coordinate is
// |analytic - numeric| / max(1, |analytic|). The tensors are perturbed in
// place and restored. `loss` must rebuild its graph from the current values
// on every call. Throws NumericError if two evaluations at the same point
// disagree.
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> wrt, double eps = 1e-6);

// Single-input form: f is evaluated at `point`.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps = 1e-6);

}  // namespace prformer

// SPDX-License-Identifier: Apache-2.0

#include "prformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "prformer/error.hpp"

namespace prformer {

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> wrt, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw UsageError("grad_check: eps must lie in [1e-7, 1e-3]");
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor l0 = loss();
  const double base = l0.item();
  {
    NoGradGuard ng;
    const double again = loss().item();
    if (again != base) throw NumericError("grad_check: function is not deterministic");
  }
  backward(l0);

  GradCheckResult result;
  NoGradGuard ng;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor& t = wrt[ti];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = loss().item();
      values[i] = orig - eps;
      const double down = loss().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
      if (!std::isfinite(err)) throw NumericError("grad_check: non-finite difference");
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
      }
      ++result.coordinates;
    }
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps) {
  Tensor x(point.shape(), std::vector<double>(point.data().begin(), point.data().end()), true);
  return grad_check([&] { return f(x); }, {x}, eps).max_rel_error;
}

}  // namespace prformer

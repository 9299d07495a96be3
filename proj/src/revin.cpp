// SPDX-License-Identifier: Apache-2.0

#include "prformer/revin.hpp"

#include <cmath>
#include <string>

#include "prformer/error.hpp"

namespace prformer {

RevinParams make_revin_params(std::size_t channels) {
  return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true)};
}

RevinResult revin_normalize(const Tensor& x, const RevinParams& p, double eps) {
  ScopeGuard scope("revin");
  if (x.rank() < 2) throw UsageError("revin: input must be (..., L, C), got " + shape_str(x.shape()));
  if (x.dim(-2) < 2) throw DataError("revin: window length " + std::to_string(x.dim(-2)) + " < 2");
  if (p.gamma.shape() != Shape{x.dim(-1)})
    throw UsageError("revin: affine has " + shape_str(p.gamma.shape()) + " channels, input " + shape_str(x.shape()));
  RevinResult r;
  r.state.mean = mean(x, -2, true);
  const Tensor centered = sub(x, r.state.mean);
  r.state.std = sqrt(add_scalar(mean(square(centered), -2, true), eps));
  r.state.gamma = p.gamma;
  r.state.beta = p.beta;
  r.normalized = add(mul(div(centered, r.state.std), p.gamma), p.beta);
  return r;
}

Tensor revin_denormalize(const Tensor& y, const RevinState& state) {
  ScopeGuard scope("revin");
  for (double g : state.gamma.data())
    if (!(std::fabs(g) >= kRevinMinGain))
      throw NumericError("revin: |gamma| below " + std::to_string(kRevinMinGain) + " is not invertible");
  const Tensor unscaled = div(sub(y, state.beta), state.gamma);
  return add(mul(unscaled, state.std), state.mean);
}

void clamp_revin_gain(RevinParams& p) {
  for (double& g : p.gamma.mutable_data())
    if (std::fabs(g) < kRevinMinGain) g = g < 0 ? -kRevinMinGain : kRevinMinGain;
}

}  // namespace prformer

// SPDX-License-Identifier: Apache-2.0
//
// Reversible instance normalization. Statistics come from each lookback
// window alone; the learnable affine is per channel.

#pragma once

#include "prformer/tensor.hpp"

namespace prformer {

inline constexpr double kRevinEps = 1e-5;
// Smallest |gamma| accepted; keeps the affine invertible.
inline constexpr double kRevinMinGain = 1e-4;

struct RevinParams {
  Tensor gamma;  // (C)
  Tensor beta;   // (C)
};

struct RevinState {
  Tensor mean;   // (..., 1, C)
  Tensor std;    // (..., 1, C), sqrt(var + eps)
  Tensor gamma;  // (C)
  Tensor beta;   // (C)
};

struct RevinResult {
  Tensor normalized;
  RevinState state;
};

RevinParams make_revin_params(std::size_t channels);

// x: (..., L, C) with L >= 2. Population variance over L.
RevinResult revin_normalize(const Tensor& x, const RevinParams& p, double eps = kRevinEps);

// y: (..., H, C). Exact inverse of the affine and standardization in `state`.
Tensor revin_denormalize(const Tensor& y, const RevinState& state);

// Pushes any |gamma| below kRevinMinGain out to that bound, keeping its sign.
void clamp_revin_gain(RevinParams& p);

}  // namespace prformer

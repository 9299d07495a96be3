// SPDX-License-Identifier: Apache-2.0
//
// Post-norm Transformer encoder over variate tokens and the shared
// channel-wise forecast head. Tokens carry no positional encoding.

#pragma once

#include <random>
#include <vector>

#include "prformer/nn.hpp"

namespace prformer {

// What stands in the token-mixing slot of each layer.
enum class MixerKind { Attention, TokenLinear };

struct EncoderLayerParams {
  AttentionParams attention;  // used with MixerKind::Attention
  LinearParams token_linear;  // used with MixerKind::TokenLinear
  LayerNormParams norm1, norm2;
  LinearParams ff_in, ff_out;  // d_model -> d_ff -> d_model
};

struct EncoderParams {
  std::vector<EncoderLayerParams> layers;
  LinearParams head;  // d_model -> pred_len, shared by all channels
};

struct EncoderOptions {
  std::size_t heads = 1;
  double dropout = 0.0;
  bool training = false;
  MixerKind mixer = MixerKind::Attention;
};

EncoderParams make_encoder_params(std::size_t layers, std::size_t d_model, std::size_t d_ff, std::size_t pred_len,
                                  MixerKind mixer, std::mt19937_64& rng);

// One layer: A = LN(H + drop(mix(H))); H' = LN(A + drop(FFN(A))).
Tensor encoder_layer(const Tensor& h, const EncoderLayerParams& p, const EncoderOptions& opt, std::mt19937_64& rng,
                     std::vector<Tensor>* probabilities = nullptr);

// h: (..., C, D) -> (..., C, D). `probabilities` collects every head of every layer.
Tensor encode(const Tensor& h, const EncoderParams& p, const EncoderOptions& opt, std::mt19937_64& rng,
              std::vector<Tensor>* probabilities = nullptr);

// tokens: (..., C, D) -> forecast (..., pred_len, C).
Tensor project(const Tensor& tokens, const LinearParams& head);

}  // namespace prformer

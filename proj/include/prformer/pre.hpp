// SPDX-License-Identifier: Apache-2.0
//
// Pyramidal RNN embedding: a stack of stride == kernel convolutions whose
// kernels are the ratios between consecutive configured periods, a top-down
// pass that adds upsampled top-level features back into every level, one GRU
// per level, and a temperature-softmax weighted concatenation of the final
// GRU states projected to the model width.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "prformer/nn.hpp"

namespace prformer {

struct PyramidConfig {
  std::vector<std::size_t> windows;        // ascending periods, one per level
  std::vector<std::size_t> kernels;        // kernels[i] = floor(windows[i] / windows[i-1]), windows[-1] = 1
  std::vector<std::size_t> level_lengths;  // sequence length at each level for `lookback`
  std::size_t lookback = 0;
  std::vector<std::string> warnings;

  std::size_t levels() const { return windows.size(); }
};

PyramidConfig build_pyramid_config(const std::vector<std::size_t>& windows, std::size_t lookback);

// Per-level GRU widths: floor(d_model / levels) each, with the remainder
// handed to the last level. In strict mode a remainder is an error.
std::vector<std::size_t> level_hidden_sizes(std::size_t d_model, std::size_t levels, bool strict);

struct PREParams {
  std::vector<Conv1dParams> convs;
  std::vector<GRUParams> grus;
  Tensor scale_logits;  // (levels), initialized to 1/levels
  LinearParams fusion;  // (sum of hidden sizes) -> d_model
};

// GRU widths follow level_hidden_sizes(d_model, width_levels); width_levels 0
// means cfg.levels(). A larger width_levels keeps the lower levels of a
// deeper pyramid at their original widths.
PREParams make_pre_params(const PyramidConfig& cfg, std::size_t conv_channels, std::size_t d_model,
                          bool strict_dims, std::mt19937_64& rng, std::size_t width_levels = 0);

// x: (..., L, in_ch) -> one feature per level, (..., level_lengths[i], conv_channels).
std::vector<Tensor> bottom_up(const Tensor& x, const PyramidConfig& cfg, const PREParams& p);

// Adds the top feature, repeated up to each level's length, to that level.
// The top level passes through unchanged.
std::vector<Tensor> top_down_fuse(const std::vector<Tensor>& features);

// Scale weights softmax(scale_logits / temperature).
Tensor scale_weights(const PREParams& p, double temperature);

// fused[i]: (..., len_i, ch) -> (..., d_model).
Tensor multi_scale_rnn(const std::vector<Tensor>& fused, const PREParams& p, double temperature);

// series: (..., L) -> (..., d_model). Every series shares the same parameters.
Tensor pre_embed(const Tensor& series, const PREParams& p, const PyramidConfig& cfg, double temperature);

}  // namespace prformer

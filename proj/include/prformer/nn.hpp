// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks composed from tensor primitives. Sequences are laid
// out time-major: (..., length, features).

#pragma once

#include <random>
#include <vector>

#include "prformer/tensor.hpp"

namespace prformer {

struct LinearParams {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

struct Conv1dParams {
  Tensor weight;  // (out_ch, in_ch, kernel)
  Tensor bias;    // (out_ch)
  std::size_t stride = 1;
  std::size_t kernel() const { return weight.dim(2); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
};

struct GRUParams {
  Tensor w_update, w_reset, w_candidate;  // (in, hidden)
  Tensor u_update, u_reset, u_candidate;  // (hidden, hidden)
  Tensor b_update, b_reset, b_candidate;  // (hidden)
  std::size_t in_dim() const { return w_update.dim(0); }
  std::size_t hidden() const { return w_update.dim(1); }
};

struct LayerNormParams {
  Tensor gain;  // (dim)
  Tensor bias;  // (dim)
};

struct AttentionParams {
  // Per-head projections are column blocks of these: head h owns columns
  // [h*d_k, (h+1)*d_k).
  LinearParams query, key, value;
  LinearParams output;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
LinearParams make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
Conv1dParams make_conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::mt19937_64& rng);
// uniform(-1/sqrt(hidden), 1/sqrt(hidden)) for every GRU tensor.
GRUParams make_gru(std::size_t in_dim, std::size_t hidden, std::mt19937_64& rng);
LayerNormParams make_layer_norm(std::size_t dim);
AttentionParams make_attention(std::size_t d_model, std::mt19937_64& rng);

Tensor linear(const Tensor& x, const LinearParams& p);

// Output length of a stride == kernel convolution without padding.
std::size_t conv1d_out_length(std::size_t length, std::size_t kernel);

// x: (..., length, in_ch) -> (..., floor(length/kernel), out_ch). Stride must
// equal the kernel size; trailing samples that do not fill a window are dropped.
Tensor conv1d(const Tensor& x, const Conv1dParams& p);

struct GRUOutput {
  Tensor all_hidden;  // (..., length, hidden); undefined unless requested
  Tensor last;        // (..., hidden)
};

// seq: (..., length, in_dim). h0 is (hidden) or (..., hidden); undefined means zeros.
GRUOutput gru_forward(const Tensor& seq, const GRUParams& p, const Tensor& h0 = {}, bool keep_all = true);

// Normalizes the last axis to zero mean and unit population variance, then
// applies gain/bias.
Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Max-subtracted softmax over the last axis.
Tensor softmax(const Tensor& logits);
// softmax(logits / temperature); temperature must be positive.
Tensor softmax_temp(const Tensor& logits, double temperature);

// h: (..., tokens, d_model). When `probabilities` is given it receives one
// (..., tokens, tokens) tensor per head.
Tensor multi_head_attention(const Tensor& h, const AttentionParams& p, std::size_t heads,
                            std::vector<Tensor>* probabilities = nullptr);

// Nearest-neighbour repeat along the time axis: output step j reads input
// step floor(j * len / target_len). x: (..., len, ch).
Tensor upsample_repeat(const Tensor& x, std::size_t target_len);

}  // namespace prformer

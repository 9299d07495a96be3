// SPDX-License-Identifier: Apache-2.0

#include "prformer/nn.hpp"

#include <cmath>
#include <string>

#include "prformer/error.hpp"

namespace prformer {

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

LinearParams make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearParams p;
  p.weight = uniform({in, out}, bound, rng);
  p.bias = uniform({out}, bound, rng);
  return p;
}

Conv1dParams make_conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel));
  Conv1dParams p;
  p.weight = uniform({out_ch, in_ch, kernel}, bound, rng);
  p.bias = uniform({out_ch}, bound, rng);
  p.stride = kernel;
  return p;
}

GRUParams make_gru(std::size_t in_dim, std::size_t hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  GRUParams p;
  p.w_update = uniform({in_dim, hidden}, bound, rng);
  p.w_reset = uniform({in_dim, hidden}, bound, rng);
  p.w_candidate = uniform({in_dim, hidden}, bound, rng);
  p.u_update = uniform({hidden, hidden}, bound, rng);
  p.u_reset = uniform({hidden, hidden}, bound, rng);
  p.u_candidate = uniform({hidden, hidden}, bound, rng);
  p.b_update = uniform({hidden}, bound, rng);
  p.b_reset = uniform({hidden}, bound, rng);
  p.b_candidate = uniform({hidden}, bound, rng);
  return p;
}

LayerNormParams make_layer_norm(std::size_t dim) {
  return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

AttentionParams make_attention(std::size_t d_model, std::mt19937_64& rng) {
  AttentionParams p;
  p.query = make_linear(d_model, d_model, rng);
  p.key = make_linear(d_model, d_model, rng);
  p.value = make_linear(d_model, d_model, rng);
  p.output = make_linear(d_model, d_model, rng);
  return p;
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  if (x.shape().back() != p.in_dim())
    throw UsageError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(p.weight.shape()));
  if (x.rank() == 1) return reshape(add(matmul(reshape(x, {1, x.numel()}), p.weight), p.bias), {p.out_dim()});
  return add(matmul(x, p.weight), p.bias);
}

std::size_t conv1d_out_length(std::size_t length, std::size_t kernel) {
  if (kernel == 0 || length < kernel) return 0;
  return (length - kernel) / kernel + 1;
}

Tensor conv1d(const Tensor& x, const Conv1dParams& p) {
  ScopeGuard scope("conv1d");
  const std::size_t k = p.kernel();
  if (p.stride != k)
    throw UsageError("conv1d: stride " + std::to_string(p.stride) + " must equal kernel " + std::to_string(k));
  if (x.rank() < 2) throw UsageError("conv1d: input must be (..., length, channels), got " + shape_str(x.shape()));
  const std::size_t length = x.dim(-2);
  const std::size_t in_ch = x.dim(-1);
  if (in_ch != p.in_channels())
    throw UsageError("conv1d: input channels " + std::to_string(in_ch) + " do not match weight " +
                     shape_str(p.weight.shape()));
  if (length < k)
    throw UsageError("conv1d: length " + std::to_string(length) + " shorter than kernel " + std::to_string(k));
  const std::size_t out_len = conv1d_out_length(length, k);
  const std::size_t out_ch = p.out_channels();

  Tensor trimmed = out_len * k == length ? x : slice(x, -2, 0, out_len * k);
  Shape windows = x.shape();
  windows.pop_back();
  windows.back() = out_len;
  Shape patch_shape = windows;
  patch_shape.push_back(k);
  patch_shape.push_back(in_ch);
  // (..., out_len, k, in) -> (..., out_len, in, k) matches the (out, in, k) weight layout.
  Tensor patches = transpose(reshape(trimmed, patch_shape));
  Shape flat_shape = windows;
  flat_shape.push_back(in_ch * k);
  Tensor w = transpose(reshape(p.weight, {out_ch, in_ch * k}));
  return add(matmul(reshape(patches, flat_shape), w), p.bias);
}

GRUOutput gru_forward(const Tensor& seq, const GRUParams& p, const Tensor& h0, bool keep_all) {
  ScopeGuard scope("gru");
  if (seq.rank() < 2) throw UsageError("gru: sequence must be (..., length, features), got " + shape_str(seq.shape()));
  const std::size_t hid = p.hidden();
  if (seq.dim(-1) != p.in_dim())
    throw UsageError("gru: input dim " + std::to_string(seq.dim(-1)) + " does not match " +
                     std::to_string(p.in_dim()));
  const std::size_t length = seq.dim(-2);

  Shape state_shape = seq.shape();
  state_shape.pop_back();
  state_shape.back() = hid;
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 2 < seq.rank(); ++i) rows *= seq.shape()[i];

  Tensor h;
  if (!h0.defined()) {
    h = Tensor::zeros({rows, hid});
  } else if (h0.shape() == Shape{hid}) {
    h = add(Tensor::zeros({rows, hid}), h0);
  } else if (h0.numel() == rows * hid && h0.shape().back() == hid) {
    h = reshape(h0, {rows, hid});
  } else {
    throw UsageError("gru: initial state " + shape_str(h0.shape()) + " does not match " + shape_str(state_shape));
  }

  // Input contributions for all steps at once: (rows, length, 3*hid).
  const Tensor w_all = concat({p.w_update, p.w_reset, p.w_candidate}, 1);
  const Tensor b_all = concat({p.b_update, p.b_reset, p.b_candidate}, 0);
  const Tensor u_gates = concat({p.u_update, p.u_reset}, 1);
  const Tensor gx = add(matmul(reshape(seq, {rows, length, p.in_dim()}), w_all), b_all);

  std::vector<Tensor> steps;
  if (keep_all) steps.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    const Tensor g = reshape(slice(gx, 1, t, t + 1), {rows, 3 * hid});
    const Tensor gh = matmul(h, u_gates);
    const Tensor z = sigmoid(add(slice(g, 1, 0, hid), slice(gh, 1, 0, hid)));
    const Tensor r = sigmoid(add(slice(g, 1, hid, 2 * hid), slice(gh, 1, hid, 2 * hid)));
    const Tensor cand = tanh(add(slice(g, 1, 2 * hid, 3 * hid), matmul(mul(r, h), p.u_candidate)));
    // (1 - z) * h + z * cand
    h = add(h, mul(z, sub(cand, h)));
    if (keep_all) steps.push_back(reshape(h, {rows, 1, hid}));
  }

  GRUOutput out;
  out.last = reshape(h, state_shape);
  if (keep_all) {
    Shape all_shape = seq.shape();
    all_shape.back() = hid;
    out.all_hidden = reshape(concat(steps, 1), all_shape);
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  ScopeGuard scope("layer_norm");
  const std::size_t dim = x.dim(-1);
  if (gain.shape() != Shape{dim} || bias.shape() != Shape{dim})
    throw UsageError("layer_norm: affine params do not match last axis of " + shape_str(x.shape()));
  const Tensor centered = sub(x, mean(x, -1, true));
  const Tensor var = mean(square(centered), -1, true);
  const Tensor normed = div(centered, sqrt(add_scalar(var, eps)));
  return add(mul(normed, gain), bias);
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps) {
  return layer_norm(x, p.gain, p.bias, eps);
}

Tensor softmax(const Tensor& logits) {
  // Shifting by a constant leaves softmax unchanged, so the max needs no gradient.
  const Tensor e = exp(sub(logits, max_detached(logits, -1)));
  return div(e, sum(e, -1, true));
}

Tensor softmax_temp(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("softmax_temp: temperature must be positive");
  return softmax(scale(logits, 1.0 / temperature));
}

Tensor multi_head_attention(const Tensor& h, const AttentionParams& p, std::size_t heads,
                            std::vector<Tensor>* probabilities) {
  ScopeGuard scope("attention");
  const std::size_t d_model = h.dim(-1);
  if (heads == 0 || d_model % heads != 0)
    throw UsageError("attention: d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(heads) + " heads");
  const std::size_t dk = d_model / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const Tensor q = linear(h, p.query);
  const Tensor k = linear(h, p.key);
  const Tensor v = linear(h, p.value);

  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t lo = head * dk, hi = lo + dk;
    const Tensor qh = slice(q, -1, lo, hi);
    const Tensor kh = slice(k, -1, lo, hi);
    const Tensor vh = slice(v, -1, lo, hi);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dk));
    if (probabilities) probabilities->push_back(weights);
    outputs.push_back(matmul(weights, vh));
  }
  const Tensor merged = heads == 1 ? outputs[0] : concat(outputs, -1);
  return linear(merged, p.output);
}

Tensor upsample_repeat(const Tensor& x, std::size_t target_len) {
  ScopeGuard scope("upsample");
  if (x.rank() < 2) throw UsageError("upsample: input must be (..., length, channels)");
  const std::size_t len = x.dim(-2);
  if (target_len < len)
    throw UsageError("upsample: target length " + std::to_string(target_len) + " shorter than " +
                     std::to_string(len));
  if (target_len == len) return x;
  std::vector<std::size_t> idx(target_len);
  for (std::size_t j = 0; j < target_len; ++j) idx[j] = j * len / target_len;
  return index_select(x, -2, idx);
}

}  // namespace prformer

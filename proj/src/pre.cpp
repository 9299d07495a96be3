// SPDX-License-Identifier: Apache-2.0

#include "prformer/pre.hpp"

#include <string>

#include "prformer/error.hpp"

namespace prformer {

PyramidConfig build_pyramid_config(const std::vector<std::size_t>& windows, std::size_t lookback) {
  if (windows.empty()) throw UsageError("pyramid: no windows configured");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i] == 0) throw UsageError("pyramid: window lengths must be positive");
    if (i > 0 && windows[i] <= windows[i - 1])
      throw UsageError("pyramid: windows must be strictly ascending, got " + std::to_string(windows[i - 1]) +
                       " then " + std::to_string(windows[i]));
  }
  if (lookback < windows.back())
    throw UsageError("pyramid: lookback " + std::to_string(lookback) + " shorter than top window " +
                     std::to_string(windows.back()));

  PyramidConfig cfg;
  cfg.windows = windows;
  cfg.lookback = lookback;
  std::size_t previous_window = 1;
  std::size_t length = lookback;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const std::size_t k = windows[i] / previous_window;
    if (k == 1 && i > 0)
      cfg.warnings.push_back("window " + std::to_string(windows[i]) + " after " + std::to_string(previous_window) +
                             " gives kernel 1: level " + std::to_string(i + 1) + " does no temporal downsampling");
    else if (windows[i] % previous_window != 0)
      cfg.warnings.push_back("window " + std::to_string(windows[i]) + " is not a multiple of " +
                             std::to_string(previous_window) + "; kernel floored to " + std::to_string(k));
    length = conv1d_out_length(length, k);
    if (length == 0)
      throw UsageError("pyramid: level " + std::to_string(i + 1) + " has zero length for lookback " +
                       std::to_string(lookback));
    cfg.kernels.push_back(k);
    cfg.level_lengths.push_back(length);
    previous_window = windows[i];
  }
  return cfg;
}

std::vector<std::size_t> level_hidden_sizes(std::size_t d_model, std::size_t levels, bool strict) {
  if (levels == 0) throw UsageError("pyramid: zero levels");
  if (d_model < levels)
    throw UsageError("pre: d_model " + std::to_string(d_model) + " smaller than level count " +
                     std::to_string(levels));
  if (strict && d_model % levels != 0)
    throw UsageError("pre: d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(levels) +
                     " levels");
  std::vector<std::size_t> sizes(levels, d_model / levels);
  sizes.back() += d_model % levels;
  return sizes;
}

PREParams make_pre_params(const PyramidConfig& cfg, std::size_t conv_channels, std::size_t d_model,
                          bool strict_dims, std::mt19937_64& rng, std::size_t width_levels) {
  if (conv_channels == 0) throw UsageError("pre: conv_channels must be positive");
  if (width_levels == 0) width_levels = cfg.levels();
  if (width_levels < cfg.levels())
    throw UsageError("pre: width_levels " + std::to_string(width_levels) + " below level count " +
                     std::to_string(cfg.levels()));
  auto hidden = level_hidden_sizes(d_model, width_levels, strict_dims);
  hidden.resize(cfg.levels());
  std::size_t concat_dim = 0;
  for (std::size_t h : hidden) concat_dim += h;
  PREParams p;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < cfg.levels(); ++i) {
    p.convs.push_back(make_conv1d(in_ch, conv_channels, cfg.kernels[i], rng));
    in_ch = conv_channels;
  }
  for (std::size_t i = 0; i < cfg.levels(); ++i) p.grus.push_back(make_gru(conv_channels, hidden[i], rng));
  p.scale_logits = Tensor::full({cfg.levels()}, 1.0 / static_cast<double>(cfg.levels()), true);
  p.fusion = make_linear(concat_dim, d_model, rng);
  return p;
}

std::vector<Tensor> bottom_up(const Tensor& x, const PyramidConfig& cfg, const PREParams& p) {
  if (p.convs.size() != cfg.levels())
    throw UsageError("pre: " + std::to_string(p.convs.size()) + " conv levels for a " +
                     std::to_string(cfg.levels()) + "-level pyramid");
  if (x.dim(-2) != cfg.lookback)
    throw UsageError("pre: input length " + std::to_string(x.dim(-2)) + " does not match lookback " +
                     std::to_string(cfg.lookback));
  std::vector<Tensor> features;
  Tensor level = x;
  for (std::size_t i = 0; i < cfg.levels(); ++i) {
    level = conv1d(level, p.convs[i]);
    features.push_back(level);
  }
  return features;
}

std::vector<Tensor> top_down_fuse(const std::vector<Tensor>& features) {
  if (features.empty()) throw UsageError("top_down_fuse: no features");
  std::vector<Tensor> fused(features.size());
  fused.back() = features.back();
  Tensor carried = features.back();
  for (std::size_t i = features.size() - 1; i-- > 0;) {
    carried = upsample_repeat(carried, features[i].dim(-2));
    fused[i] = add(carried, features[i]);
  }
  return fused;
}

Tensor scale_weights(const PREParams& p, double temperature) { return softmax_temp(p.scale_logits, temperature); }

Tensor multi_scale_rnn(const std::vector<Tensor>& fused, const PREParams& p, double temperature) {
  if (fused.size() != p.grus.size())
    throw UsageError("pre: " + std::to_string(fused.size()) + " fused levels for " + std::to_string(p.grus.size()) +
                     " GRUs");
  const Tensor beta = scale_weights(p, temperature);
  std::vector<Tensor> parts;
  parts.reserve(fused.size());
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const Tensor last = gru_forward(fused[i], p.grus[i], {}, false).last;
    parts.push_back(mul(last, slice(beta, 0, i, i + 1)));
  }
  const Tensor h = parts.size() == 1 ? parts[0] : concat(parts, -1);
  return linear(h, p.fusion);
}

Tensor pre_embed(const Tensor& series, const PREParams& p, const PyramidConfig& cfg, double temperature) {
  if (series.dim(-1) != cfg.lookback)
    throw UsageError("pre: series length " + std::to_string(series.dim(-1)) + " does not match lookback " +
                     std::to_string(cfg.lookback));
  Shape seq_shape = series.shape();
  seq_shape.push_back(1);
  const auto features = bottom_up(reshape(series, seq_shape), cfg, p);
  return multi_scale_rnn(top_down_fuse(features), p, temperature);
}

}  // namespace prformer

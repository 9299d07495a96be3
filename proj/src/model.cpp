// SPDX-License-Identifier: Apache-2.0

#include "prformer/model.hpp"

#include <algorithm>

#include "prformer/error.hpp"

namespace prformer {

void ParamStore::add(std::string name, const Tensor& t) {
  if (contains(name)) throw UsageError("parameter '" + name + "' registered twice");
  entries_.emplace_back(std::move(name), t);
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw UsageError("no parameter named '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

PRformerModel::PRformerModel(const RunConfig& config, std::size_t channels) : config_(config), channels_(channels) {
  config_.validate();
  if (channels_ == 0) throw UsageError("model: channel count must be positive");
  std::mt19937_64 rng(config_.seed);
  revin_ = make_revin_params(channels_);
  if (config_.variant == Variant::V2) {
    linear_embed_ = make_linear(config_.lookback, config_.d_model, rng);
  } else {
    std::vector<std::size_t> windows = config_.pyramidal_windows;
    if (config_.variant == Variant::V3) windows.resize(1);
    pyramid_ = build_pyramid_config(windows, config_.lookback);
    pre_ = make_pre_params(pyramid_, config_.conv_channels, config_.d_model, config_.strict_dims, rng,
                           config_.pyramidal_windows.size());
  }
  const MixerKind mixer = config_.variant == Variant::V1 ? MixerKind::TokenLinear : MixerKind::Attention;
  encoder_ = make_encoder_params(config_.e_layers, config_.d_model, config_.ff_dim(), config_.pred_len, mixer, rng);
  register_params();
}

void PRformerModel::register_params() {
  auto add_linear = [&](const std::string& prefix, const LinearParams& p) {
    store_.add(prefix + ".weight", p.weight);
    store_.add(prefix + ".bias", p.bias);
  };
  store_.add("revin.gamma", revin_.gamma);
  store_.add("revin.beta", revin_.beta);
  if (config_.variant == Variant::V2) {
    add_linear("embed", linear_embed_);
  } else {
    for (std::size_t i = 0; i < pre_.convs.size(); ++i) {
      const std::string prefix = "pre.conv" + std::to_string(i);
      store_.add(prefix + ".weight", pre_.convs[i].weight);
      store_.add(prefix + ".bias", pre_.convs[i].bias);
    }
    for (std::size_t i = 0; i < pre_.grus.size(); ++i) {
      const std::string prefix = "pre.gru" + std::to_string(i);
      const GRUParams& g = pre_.grus[i];
      store_.add(prefix + ".w_update", g.w_update);
      store_.add(prefix + ".w_reset", g.w_reset);
      store_.add(prefix + ".w_candidate", g.w_candidate);
      store_.add(prefix + ".u_update", g.u_update);
      store_.add(prefix + ".u_reset", g.u_reset);
      store_.add(prefix + ".u_candidate", g.u_candidate);
      store_.add(prefix + ".b_update", g.b_update);
      store_.add(prefix + ".b_reset", g.b_reset);
      store_.add(prefix + ".b_candidate", g.b_candidate);
    }
    store_.add("pre.scale_logits", pre_.scale_logits);
    add_linear("pre.fusion", pre_.fusion);
  }
  for (std::size_t i = 0; i < encoder_.layers.size(); ++i) {
    const std::string prefix = "encoder.layer" + std::to_string(i);
    const EncoderLayerParams& l = encoder_.layers[i];
    if (config_.variant == Variant::V1) {
      add_linear(prefix + ".token_linear", l.token_linear);
    } else {
      add_linear(prefix + ".attn.query", l.attention.query);
      add_linear(prefix + ".attn.key", l.attention.key);
      add_linear(prefix + ".attn.value", l.attention.value);
      add_linear(prefix + ".attn.output", l.attention.output);
    }
    store_.add(prefix + ".norm1.gain", l.norm1.gain);
    store_.add(prefix + ".norm1.bias", l.norm1.bias);
    store_.add(prefix + ".norm2.gain", l.norm2.gain);
    store_.add(prefix + ".norm2.bias", l.norm2.bias);
    add_linear(prefix + ".ff_in", l.ff_in);
    add_linear(prefix + ".ff_out", l.ff_out);
  }
  add_linear("head", encoder_.head);
}

Tensor PRformerModel::embed(const Tensor& series) const {
  if (config_.variant == Variant::V2) return linear(series, linear_embed_);
  return pre_embed(series, pre_, pyramid_, config_.temperature);
}

ForwardOutput PRformerModel::forward(const Tensor& x, bool training, std::mt19937_64& rng,
                                     std::vector<Tensor>* attention) const {
  if (x.rank() != 3 || x.dim(1) != config_.lookback || x.dim(2) != channels_)
    throw UsageError("model: expected input (batch, " + std::to_string(config_.lookback) + ", " +
                     std::to_string(channels_) + "), got " + shape_str(x.shape()));
  ForwardOutput out;
  RevinResult norm = revin_normalize(x, revin_);
  out.revin = norm.state;
  out.embeddings = embed(transpose(norm.normalized));
  EncoderOptions opt;
  opt.heads = config_.heads;
  opt.dropout = config_.dropout;
  opt.training = training;
  opt.mixer = config_.variant == Variant::V1 ? MixerKind::TokenLinear : MixerKind::Attention;
  const Tensor tokens = encode(out.embeddings, encoder_, opt, rng, attention);
  out.normalized_forecast = project(tokens, encoder_.head);
  out.forecast = revin_denormalize(out.normalized_forecast, out.revin);
  return out;
}

Tensor PRformerModel::predict(const Tensor& x) const {
  NoGradGuard ng;
  std::mt19937_64 unused(0);
  return forward(x, false, unused).forecast;
}

void PRformerModel::copy_values_from(const ParamStore& other) {
  const auto& mine = store_.entries();
  const auto& theirs = other.entries();
  if (mine.size() != theirs.size()) throw UsageError("model: parameter layouts differ");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].first != theirs[i].first || mine[i].second.shape() != theirs[i].second.shape())
      throw UsageError("model: parameter '" + theirs[i].first + "' does not match '" + mine[i].first + "'");
    Tensor dst = mine[i].second;
    const auto src = theirs[i].second.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace prformer

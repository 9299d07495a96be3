// SPDX-License-Identifier: Apache-2.0

#include "prformer/encoder.hpp"

#include "prformer/error.hpp"

namespace prformer {

EncoderParams make_encoder_params(std::size_t layers, std::size_t d_model, std::size_t d_ff, std::size_t pred_len,
                                  MixerKind mixer, std::mt19937_64& rng) {
  if (layers == 0) throw UsageError("encoder: e_layers must be at least 1");
  EncoderParams p;
  for (std::size_t i = 0; i < layers; ++i) {
    EncoderLayerParams layer;
    if (mixer == MixerKind::Attention)
      layer.attention = make_attention(d_model, rng);
    else
      layer.token_linear = make_linear(d_model, d_model, rng);
    layer.norm1 = make_layer_norm(d_model);
    layer.norm2 = make_layer_norm(d_model);
    layer.ff_in = make_linear(d_model, d_ff, rng);
    layer.ff_out = make_linear(d_ff, d_model, rng);
    p.layers.push_back(std::move(layer));
  }
  p.head = make_linear(d_model, pred_len, rng);
  return p;
}

Tensor encoder_layer(const Tensor& h, const EncoderLayerParams& p, const EncoderOptions& opt, std::mt19937_64& rng,
                     std::vector<Tensor>* probabilities) {
  const Tensor mixed = opt.mixer == MixerKind::Attention
                           ? multi_head_attention(h, p.attention, opt.heads, probabilities)
                           : linear(h, p.token_linear);
  const Tensor a = layer_norm(add(h, dropout(mixed, opt.dropout, opt.training, rng)), p.norm1);
  const Tensor ff = linear(relu(linear(a, p.ff_in)), p.ff_out);
  return layer_norm(add(a, dropout(ff, opt.dropout, opt.training, rng)), p.norm2);
}

Tensor encode(const Tensor& h, const EncoderParams& p, const EncoderOptions& opt, std::mt19937_64& rng,
              std::vector<Tensor>* probabilities) {
  if (p.layers.empty()) throw UsageError("encoder: no layers");
  if (h.rank() < 2) throw UsageError("encoder: tokens must be (..., C, D), got " + shape_str(h.shape()));
  Tensor out = h;
  for (const auto& layer : p.layers) out = encoder_layer(out, layer, opt, rng, probabilities);
  return out;
}

Tensor project(const Tensor& tokens, const LinearParams& head) {
  if (tokens.rank() == 1) return linear(tokens, head);
  return transpose(linear(tokens, head));
}

}  // namespace prformer

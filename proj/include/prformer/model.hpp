// SPDX-License-Identifier: Apache-2.0
//
// The full forecaster: RevIN -> per-channel embedding -> encoder over
// variate tokens -> shared projection head -> RevIN inverse. Ablation
// variants swap out one stage each.

#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prformer/config.hpp"
#include "prformer/encoder.hpp"
#include "prformer/pre.hpp"
#include "prformer/revin.hpp"

namespace prformer {

// Named, ordered parameter tensors. Shares storage with the structured
// parameter blocks that registered them.
class ParamStore {
 public:
  void add(std::string name, const Tensor& t);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct ForwardOutput {
  Tensor forecast;             // (B, H, C), raw scale
  Tensor normalized_forecast;  // (B, H, C), before RevIN inverse
  Tensor embeddings;           // (B, C, D) variate tokens entering the encoder
  RevinState revin;
};

class PRformerModel {
 public:
  // Parameters are drawn from an RNG seeded with config.seed.
  PRformerModel(const RunConfig& config, std::size_t channels);

  PRformerModel(const PRformerModel&) = delete;
  PRformerModel& operator=(const PRformerModel&) = delete;
  PRformerModel(PRformerModel&&) = default;
  PRformerModel& operator=(PRformerModel&&) = default;

  const RunConfig& config() const { return config_; }
  std::size_t channels() const { return channels_; }
  // Pyramid actually used (bottom level only for V3). Undefined levels for V2.
  const PyramidConfig& pyramid() const { return pyramid_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::vector<Tensor> parameters() const { return store_.tensors(); }

  // x: (B, L, C). Dropout is active only when training.
  ForwardOutput forward(const Tensor& x, bool training, std::mt19937_64& rng,
                        std::vector<Tensor>* attention = nullptr) const;
  // Inference convenience: no dropout, no tape.
  Tensor predict(const Tensor& x) const;

  // Overwrites parameter values from another model of identical layout.
  void copy_values_from(const ParamStore& other);

  RevinParams& revin() { return revin_; }
  const EncoderParams& encoder() const { return encoder_; }
  const PREParams& pre() const { return pre_; }

 private:
  Tensor embed(const Tensor& series) const;  // (B, C, L) -> (B, C, D)
  void register_params();

  RunConfig config_;
  std::size_t channels_;
  PyramidConfig pyramid_;
  RevinParams revin_;
  PREParams pre_;
  LinearParams linear_embed_;  // V2 only
  EncoderParams encoder_;
  ParamStore store_;
};

}  // namespace prformer

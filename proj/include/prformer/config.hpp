// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace prformer {

enum class Variant { Full, V1, V2, V3 };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

// One training/evaluation run. JSON keys are the member names.
struct RunConfig {
  std::size_t lookback = 96;
  std::size_t pred_len = 24;
  std::vector<std::size_t> pyramidal_windows{12, 24, 48};
  std::size_t e_layers = 1;
  std::size_t d_model = 64;
  std::size_t d_ff = 0;  // 0 means 2 * d_model
  std::size_t heads = 4;
  std::size_t conv_channels = 16;
  double dropout = 0.1;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double temperature = 1.0;
  std::uint64_t seed = 2024;
  Variant variant = Variant::Full;
  std::string dataset;
  std::string split_scheme = "auto";  // "auto", "6:2:2" or "7:1:2"
  bool strict_split = false;

  std::size_t epochs = 30;
  std::size_t patience = 10;
  double lr_decay = 0.9;
  std::size_t decay_start_epoch = 4;
  std::string loss_scale = "raw";  // "raw" or "normalized"
  double grad_clip = 0.0;          // global-norm clip, 0 disables
  bool strict_dims = false;
  std::size_t max_rows = 0;              // 0 reads the whole file
  std::size_t max_steps_per_epoch = 0;   // 0 runs every batch

  std::size_t ff_dim() const { return d_ff ? d_ff : 2 * d_model; }
  // Throws UsageError naming the first offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Only keys present in `j` are applied; unknown keys are an error.
void merge_json(RunConfig& c, const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace prformer

// SPDX-License-Identifier: Apache-2.0

#include "prformer/config.hpp"

#include <fstream>

#include "prformer/error.hpp"
#include "prformer/pre.hpp"

namespace prformer {

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::Full;
  if (name == "V1" || name == "v1") return Variant::V1;
  if (name == "V2" || name == "v2") return Variant::V2;
  if (name == "V3" || name == "v3") return Variant::V3;
  throw UsageError("unknown variant '" + name + "' (expected full, V1, V2 or V3)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::V1: return "V1";
    case Variant::V2: return "V2";
    case Variant::V3: return "V3";
    default: return "full";
  }
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw UsageError(std::string("config: ") + name + " must be positive");
  };
  positive(lookback, "lookback");
  positive(pred_len, "pred_len");
  positive(e_layers, "e_layers");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(conv_channels, "conv_channels");
  positive(batch_size, "batch_size");
  positive(epochs, "epochs");
  if (d_model % heads != 0)
    throw UsageError("config: heads (" + std::to_string(heads) + ") must divide d_model (" +
                     std::to_string(d_model) + ")");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("config: dropout must lie in [0, 1)");
  if (!(lr > 0.0)) throw UsageError("config: lr must be positive");
  if (!(temperature > 0.0)) throw UsageError("config: temperature must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw UsageError("config: lr_decay must lie in (0, 1]");
  if (grad_clip < 0.0) throw UsageError("config: grad_clip must be non-negative");
  if (loss_scale != "raw" && loss_scale != "normalized")
    throw UsageError("config: loss_scale must be 'raw' or 'normalized'");
  if (split_scheme != "auto" && split_scheme != "6:2:2" && split_scheme != "7:1:2")
    throw UsageError("config: split_scheme must be 'auto', '6:2:2' or '7:1:2'");
  if (lookback < 2) throw UsageError("config: lookback must be at least 2");
  if (variant != Variant::V2) {
    const auto pyramid = build_pyramid_config(pyramidal_windows, lookback);
    level_hidden_sizes(d_model, variant == Variant::V3 ? 1 : pyramid.levels(), strict_dims);
  }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"lookback", c.lookback},
                     {"pred_len", c.pred_len},
                     {"pyramidal_windows", c.pyramidal_windows},
                     {"e_layers", c.e_layers},
                     {"d_model", c.d_model},
                     {"d_ff", c.d_ff},
                     {"heads", c.heads},
                     {"conv_channels", c.conv_channels},
                     {"dropout", c.dropout},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"temperature", c.temperature},
                     {"seed", c.seed},
                     {"variant", variant_name(c.variant)},
                     {"dataset", c.dataset},
                     {"split_scheme", c.split_scheme},
                     {"strict_split", c.strict_split},
                     {"epochs", c.epochs},
                     {"patience", c.patience},
                     {"lr_decay", c.lr_decay},
                     {"decay_start_epoch", c.decay_start_epoch},
                     {"loss_scale", c.loss_scale},
                     {"grad_clip", c.grad_clip},
                     {"strict_dims", c.strict_dims},
                     {"max_rows", c.max_rows},
                     {"max_steps_per_epoch", c.max_steps_per_epoch}};
}

void merge_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config: top level must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lookback") c.lookback = value.get<std::size_t>();
      else if (key == "pred_len") c.pred_len = value.get<std::size_t>();
      else if (key == "pyramidal_windows") c.pyramidal_windows = value.get<std::vector<std::size_t>>();
      else if (key == "e_layers") c.e_layers = value.get<std::size_t>();
      else if (key == "d_model") c.d_model = value.get<std::size_t>();
      else if (key == "d_ff") c.d_ff = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "conv_channels") c.conv_channels = value.get<std::size_t>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "temperature") c.temperature = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
      else if (key == "dataset") c.dataset = value.get<std::string>();
      else if (key == "split_scheme") c.split_scheme = value.get<std::string>();
      else if (key == "strict_split") c.strict_split = value.get<bool>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "patience") c.patience = value.get<std::size_t>();
      else if (key == "lr_decay") c.lr_decay = value.get<double>();
      else if (key == "decay_start_epoch") c.decay_start_epoch = value.get<std::size_t>();
      else if (key == "loss_scale") c.loss_scale = value.get<std::string>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "strict_dims") c.strict_dims = value.get<bool>();
      else if (key == "max_rows") c.max_rows = value.get<std::size_t>();
      else if (key == "max_steps_per_epoch") c.max_steps_per_epoch = value.get<std::size_t>();
      else throw UsageError("config: unknown field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig c;
  merge_json(c, j);
  return c;
}

}  // namespace prformer

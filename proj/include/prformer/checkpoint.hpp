// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor archive. Layout: the 8 bytes "PRFCKPT1", a little-endian u64
// manifest length, the JSON manifest, then each tensor's values as
// little-endian IEEE-754 doubles at the manifest's byte offsets (relative to
// the payload start).

#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "prformer/model.hpp"

namespace prformer {

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const PRformerModel& model, const std::string& path);

// Rebuilds the model from the stored run configuration and loads every
// tensor, checking names and shapes against the rebuilt layout.
PRformerModel load_checkpoint(const std::string& path);

// The manifest alone, for inspection.
nlohmann::json read_checkpoint_manifest(const std::string& path);

}  // namespace prformer

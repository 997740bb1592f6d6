// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>

#include "tabloid/model.hpp"

namespace tabloid {

/// Checkpoint container: magic "TBLDCKPT", u32 version, u32 header length,
/// a JSON header (dtype, step, model config, tensor table), raw
/// little-endian tensor payloads, and a trailing FNV-1a 64 checksum over
/// everything before it.
struct CheckpointInfo {
  std::string dtype;  // "f32" or "f64"
  int64_t step = 0;
  ModelConfig config;
};

/// Reads just the header. Throws on bad magic/version.
CheckpointInfo checkpoint_info(const std::string& path);

template <class T>
void save_checkpoint(TransformerLM<T>& model, int64_t step, const std::string& path);

/// Loads a checkpoint saved with the same scalar type. Verifies the
/// checksum and tensor table; throws on corruption or dtype mismatch.
template <class T>
std::pair<TransformerLM<T>, int64_t> load_checkpoint(const std::string& path);

/// As above, but additionally requires the stored config to equal `expect`.
template <class T>
std::pair<TransformerLM<T>, int64_t> load_checkpoint(const std::string& path,
                                                     const ModelConfig& expect);

}  // namespace tabloid

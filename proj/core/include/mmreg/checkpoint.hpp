#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "mmreg/model.hpp"

namespace mmreg {

inline constexpr int kCheckpointFormatVersion = 1;

// Training-run provenance stored beside the weights.
struct CheckpointMeta {
  int format_version = kCheckpointFormatVersion;
  std::uint64_t seed = 0;
  int fold_id = -1;
  int epoch = -1;
};

// Serializes the full model state (both branches, head, BN buffers) plus
// NetworkConfig and run metadata. Binary container: magic, a JSON header
// with the tensor directory, then raw little-endian float32 data.
void save_checkpoint(const std::string& path, RegistrationModel& model,
                     const CheckpointMeta& meta);

// Rebuilds the model from the stored NetworkConfig and loads every tensor.
// When `expected` is given, a NetworkConfig mismatch is a ConfigError.
std::unique_ptr<RegistrationModel> load_checkpoint(const std::string& path,
                                                   CheckpointMeta* meta_out = nullptr,
                                                   const NetworkConfig* expected = nullptr);

}  // namespace mmreg

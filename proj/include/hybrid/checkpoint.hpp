#pragma once

#include <filesystem>
#include <memory>

#include "hybrid/config.hpp"

namespace hybrid {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, little-endian:
///   "HYBRIDCK", u32 version, u32 bytes per value,
///   u64 config length, config JSON,
///   u64 parameter count, then per parameter:
///   u32 name length, name, u32 ndim, u64 dims..., values.
void save_checkpoint(const std::filesystem::path& path, const PairModel& model, const RunConfig& config);

struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<PairModel> model;
};

/// Rebuilds the model from the stored config and copies the values in.
/// Values stored at the other precision are converted. Wrong magic, version,
/// names or shapes raise DataError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hybrid

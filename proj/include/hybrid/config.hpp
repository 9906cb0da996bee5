#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hybrid/model.hpp"
#include "hybrid/train.hpp"

namespace hybrid {

/// Everything a training run needs besides data.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// {"encoder": {...}, "model": {...}, "train": {...}}. Unknown keys and
/// wrongly typed values raise ConfigError naming the key.
std::string to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Overlays only the keys present in `text` onto `base`.
RunConfig merge_run_config(const RunConfig& base, const std::string& text);

/// san, lstm, onlstm, hybrid, hybrid-shortcut, hybrid-3l3l
std::vector<std::string> preset_names();
RunConfig preset(const std::string& name);

/// Shrinks a configuration to the reduced setting used for quick runs:
/// width 64, 10 epochs, faster optimizer settings.
void apply_tiny(RunConfig& config);

/// Bins used with --tiny: 625 pairs per bin.
inline constexpr std::size_t kTinyPerBin = 625;

}  // namespace hybrid

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mosa/adapters.hpp"
#include "mosa/backbone.hpp"
#include "mosa/training.hpp"

namespace mosa {

/// adapter: adapter or LoRA modules (MoSA/MoSL when num_experts > 1);
/// linear_probe: head only; bitfit: head plus backbone biases.
enum class Tuning { kAdapter, kLinearProbe, kBitfit };

struct RunConfig {
  BackboneConfig backbone;
  std::uint64_t backbone_seed = 0;
  Tuning tuning = Tuning::kAdapter;
  AdapterConfig adapter;
  TrainPlan plan;
  std::string train_data;
  std::string val_data;
  std::string out_dir;
  bool merged = false;     // adapters hold dense merged weights
  bool log_steps = false;  // per-step metrics rows

  /// Throws ConfigError for any invalid section.
  void validate() const;
};

struct ParsedConfig {
  RunConfig config;
  /// One line per key left at its default.
  std::vector<std::string> notices;
};

/// Flat `key = value` lines; `#` starts a comment, blank lines are ignored.
/// Unknown keys, repeated keys and malformed values raise ConfigError with
/// the line number.
ParsedConfig parse_config(std::string_view text);
ParsedConfig load_config(const std::filesystem::path& path);

/// Applies one `key=value` assignment.
void apply_override(RunConfig& cfg, std::string_view assignment);
/// Current value of `key` in canonical form; ConfigError for unknown keys.
std::string config_value(const RunConfig& cfg, const std::string& key);

/// Every key, sorted, one `key=value` line each. parse_config(config_text(c))
/// reproduces c.
std::string config_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

std::string to_string(Tuning t);

}  // namespace mosa

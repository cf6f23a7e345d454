#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedsim/orchestrator.hpp"

namespace fedsim {

/// Everything one experiment file describes: the simulation, the repeat
/// seeds, where results go and the accuracy-surface probe settings.
struct ExperimentConfig {
  SimConfig sim;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "results";
  double surface_radius = 1.0;
  int surface_steps = 11;

  /// The simulation for one repeat seed.
  SimConfig for_seed(std::uint64_t seed) const;
  void validate() const;
};

/// Every accepted key, in the order config_resolved.json lists them.
const std::vector<std::string>& config_keys();

/// Sets one dotted key from its text form. Throws ConfigError naming the key
/// for unknown keys and malformed values.
void apply_setting(ExperimentConfig& cfg, const std::string& key,
                   const std::string& value);

/// Flat `key = value` lines, `#` comments, blank lines ignored. A document
/// starting with `{` is read as JSON (the config_resolved.json form).
/// `source` prefixes diagnostics as `source:line`.
ExperimentConfig parse_config(const std::string& text,
                              const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully expanded JSON form; parse_config reads it back to an equal config.
std::string to_json(const ExperimentConfig& cfg);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace fedsim

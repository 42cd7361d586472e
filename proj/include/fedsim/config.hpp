#pragma once

#include <filesystem>

#include <json.hpp>

#include "fedsim/simulator.hpp"

namespace fedsim {

/// Parses and validates an experiment config file. Unknown keys, type
/// mismatches, and violated invariants all raise ConfigError with the
/// offending key; missing files raise IoError; malformed syntax ParseError.
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Same, from an already-parsed document (used by replay).
ExperimentConfig config_from_json(const nlohmann::ordered_json& doc);

/// Fully-resolved config (every default materialized) as a document whose
/// round-trip through config_from_json reproduces the config exactly.
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

}  // namespace fedsim

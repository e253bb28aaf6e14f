#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "survnet/training.hpp"

namespace survnet {

// Everything a run needs, with defaults matching the struct initializers.
struct AppConfig {
    SyntheticConfig synthetic;
    TrainConfig train;  // train.model carries the model section
};

nlohmann::ordered_json synthetic_config_to_json(const SyntheticConfig& cfg);
nlohmann::ordered_json model_config_to_json(const SurvivalNetConfig& cfg);
// Includes the model as a nested "model" object (checkpoint headers use this).
nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg);

// Strict parsers: unknown keys, wrong types and wrong array lengths all throw
// ConfigError naming the offending path. `where` prefixes those paths.
SyntheticConfig synthetic_config_from_json(const nlohmann::ordered_json& obj,
                                           const std::string& where);
SurvivalNetConfig model_config_from_json(const nlohmann::ordered_json& obj,
                                         const std::string& where);
TrainConfig train_config_from_json(const nlohmann::ordered_json& obj, const std::string& where);

// Top-level file layout: {"synthetic": {...}, "model": {...}, "train": {...}},
// every section optional. The model may live either at the top level or under
// "train", not both.
AppConfig parse_config(const nlohmann::ordered_json& doc, const std::string& where);
AppConfig load_config_file(const std::filesystem::path& path);

// Full defaults-applied echo of the configuration a run actually used.
nlohmann::ordered_json effective_config_json(const AppConfig& cfg);

nlohmann::ordered_json run_report_json(const RunReport& report);
nlohmann::ordered_json ablation_report_json(const AblationReport& report);

} // namespace survnet
